//! Model checkpoints.
//!
//! Layout: a UTF-8 header terminated by `[end]\n`, then length-prefixed
//! binary parameter segments, then a SHA-256 of everything before it.
//!
//! ```text
//! msalign-checkpoint
//! format_version = 1
//! epoch = <n>
//! loss_history = <comma-separated>
//! fourier.seed = <u64>            (only with a Fourier basis)
//! segments = spectral,fourier,molecular
//! [config]
//! <canonical key = value lines>
//! [end]
//! per segment: u32 name_len, name, u64 len, segment bytes
//! [u8; 32] SHA-256
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{decode_segment, encode_segment, ParameterStore, Tensor};
use crate::spectral::FourierBasis;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "msalign-checkpoint";
const END: &str = "[end]\n";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Configuration the model was built and trained with.
    pub config: RunConfig,
    pub epoch: usize,
    pub loss_history: Vec<f64>,
    pub model: Model,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn split_store(store: &ParameterStore, prefix: &str) -> ParameterStore {
    let mut out = ParameterStore::new();
    for (path, t) in store.iter().filter(|(p, _)| p.starts_with(prefix)) {
        out.insert(path.clone(), t.detached(), store.is_trainable(path));
    }
    out
}

fn basis_store(basis: &FourierBasis) -> Result<ParameterStore> {
    let mut s = ParameterStore::new();
    s.insert(
        "fourier.frequencies",
        Tensor::vector(basis.frequencies().to_vec())?,
        false,
    );
    s.insert("fourier.sigma", Tensor::scalar(basis.sigma()), false);
    Ok(s)
}

impl Checkpoint {
    pub fn new(config: &RunConfig, model: Model, loss_history: Vec<f64>) -> Self {
        Checkpoint {
            config: config.clone(),
            epoch: loss_history.len(),
            loss_history,
            model,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut segments: Vec<(&str, Vec<u8>)> =
            vec![("spectral", encode_segment(&split_store(&self.model.store, "spec.")))];
        if let Some(basis) = &self.model.spectral.basis {
            segments.push(("fourier", encode_segment(&basis_store(basis)?)));
        }
        segments.push(("molecular", encode_segment(&split_store(&self.model.store, "mol."))));

        let mut header = format!(
            "{MAGIC}\nformat_version = {CHECKPOINT_FORMAT_VERSION}\nepoch = {}\n",
            self.epoch
        );
        let history: Vec<String> = self.loss_history.iter().map(f64::to_string).collect();
        header.push_str(&format!("loss_history = {}\n", history.join(",")));
        if let Some(basis) = &self.model.spectral.basis {
            header.push_str(&format!("fourier.seed = {}\n", basis.seed()));
        }
        let names: Vec<&str> = segments.iter().map(|(n, _)| *n).collect();
        header.push_str(&format!("segments = {}\n[config]\n", names.join(",")));
        header.push_str(&self.config.model_text());
        header.push_str(END);

        let mut out = header.into_bytes();
        for (name, bytes) in segments {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(&bytes);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 32 {
            return Err(bad("file too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch"));
        }
        let end = find(body, END.as_bytes()).ok_or_else(|| bad("header terminator missing"))?;
        let header = std::str::from_utf8(&body[..end]).map_err(|_| bad("header is not UTF-8"))?;
        let mut rest = &body[end + END.len()..];

        let (meta, config_text) = header
            .split_once("[config]\n")
            .ok_or_else(|| bad("config section missing"))?;
        let mut lines = meta.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("not a checkpoint file"));
        }
        let mut version = None;
        let mut epoch = None;
        let mut history = None;
        let mut fourier_seed = None;
        let mut segment_names = None;
        for line in lines {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| bad(format!("bad header line {line:?}")))?;
            match k {
                "format_version" => version = Some(v.parse::<u32>().map_err(|_| bad("bad format_version"))?),
                "epoch" => epoch = Some(v.parse::<usize>().map_err(|_| bad("bad epoch"))?),
                "loss_history" => {
                    history = Some(if v.is_empty() {
                        Vec::new()
                    } else {
                        v.split(',')
                            .map(|x| x.parse::<f64>().map_err(|_| bad("bad loss history")))
                            .collect::<Result<Vec<_>>>()?
                    })
                }
                "fourier.seed" => fourier_seed = Some(v.parse::<u64>().map_err(|_| bad("bad fourier.seed"))?),
                "segments" => segment_names = Some(v.split(',').map(str::to_string).collect::<Vec<_>>()),
                _ => return Err(bad(format!("unknown header key {k:?}"))),
            }
        }
        if version != Some(CHECKPOINT_FORMAT_VERSION) {
            return Err(bad(format!("unsupported format version {version:?}")));
        }
        let epoch = epoch.ok_or_else(|| bad("epoch missing"))?;
        let loss_history = history.ok_or_else(|| bad("loss history missing"))?;
        let segment_names = segment_names.ok_or_else(|| bad("segment list missing"))?;

        let mut config = RunConfig::default();
        config.apply_text(config_text)?;
        config.validate()?;

        let mut segments = Vec::new();
        for expected in &segment_names {
            let name_len = u32::from_le_bytes(take(&mut rest, 4)?.try_into().expect("4 bytes")) as usize;
            let name = std::str::from_utf8(take(&mut rest, name_len)?).map_err(|_| bad("segment name"))?;
            if name != expected {
                return Err(bad(format!("segment {name:?} where {expected:?} was listed")));
            }
            let len = u64::from_le_bytes(take(&mut rest, 8)?.try_into().expect("8 bytes")) as usize;
            segments.push((name.to_string(), decode_segment(take(&mut rest, len)?)?));
        }
        if !rest.is_empty() {
            return Err(bad("trailing bytes after segments"));
        }

        let mut model = Model::init(&config.model_config(), config.seed)?;
        let mut store = ParameterStore::new();
        let mut basis = None;
        for (name, seg) in segments {
            match name.as_str() {
                "spectral" | "molecular" => {
                    for (path, t) in seg.iter() {
                        store.insert(path.clone(), t.clone(), seg.is_trainable(path));
                    }
                }
                "fourier" => {
                    let freqs = seg.get("fourier.frequencies")?.data().to_vec();
                    let sigma = seg.get("fourier.sigma")?.item();
                    let seed = fourier_seed.ok_or_else(|| bad("fourier.seed missing"))?;
                    basis = Some(FourierBasis::from_parts(freqs, sigma, seed)?);
                }
                other => return Err(bad(format!("unknown segment {other:?}"))),
            }
        }
        check_same_layout("spectral", &model.store, &store, "spec.")?;
        check_same_layout("molecular", &model.store, &store, "mol.")?;
        match (&model.spectral.basis, &basis) {
            (Some(a), Some(b)) if a.count() != b.count() => {
                return Err(Error::IncompatibleCheckpoint {
                    component: "fourier".into(),
                    reason: format!("{} frequencies stored, {} configured", b.count(), a.count()),
                })
            }
            (Some(_), None) | (None, Some(_)) => {
                return Err(Error::IncompatibleCheckpoint {
                    component: "fourier".into(),
                    reason: "basis presence disagrees with spectral.fourier".into(),
                })
            }
            _ => {}
        }
        model.store = store;
        model.spectral.basis = basis;
        Ok(Checkpoint {
            config,
            epoch,
            loss_history,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Fails with the first encoder whose shape settings differ from `run`.
    pub fn check_compatible(&self, run: &RunConfig) -> Result<()> {
        for (component, prefix) in [("spectral", "spectral."), ("molecular", "mol.")] {
            let ours = self.config.to_text_where(|k| k.starts_with(prefix));
            let theirs = run.to_text_where(|k| k.starts_with(prefix));
            if ours != theirs {
                let diff = ours
                    .lines()
                    .zip(theirs.lines())
                    .find(|(a, b)| a != b)
                    .map(|(a, b)| format!("checkpoint has `{a}`, config has `{b}`"))
                    .unwrap_or_default();
                return Err(Error::IncompatibleCheckpoint {
                    component: component.into(),
                    reason: diff,
                });
            }
        }
        Ok(())
    }
}

fn take<'b>(rest: &mut &'b [u8], n: usize) -> Result<&'b [u8]> {
    if rest.len() < n {
        return Err(bad("truncated segment table"));
    }
    let (head, tail) = rest.split_at(n);
    *rest = tail;
    Ok(head)
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

fn check_same_layout(component: &str, fresh: &ParameterStore, loaded: &ParameterStore, prefix: &str) -> Result<()> {
    let a: Vec<(&String, &[usize])> = fresh
        .iter()
        .filter(|(p, _)| p.starts_with(prefix))
        .map(|(p, t)| (p, t.shape()))
        .collect();
    let b: Vec<(&String, &[usize])> = loaded
        .iter()
        .filter(|(p, _)| p.starts_with(prefix))
        .map(|(p, t)| (p, t.shape()))
        .collect();
    if a != b {
        let reason = a
            .iter()
            .zip(&b)
            .find(|(x, y)| x != y)
            .map(|(x, y)| format!("expected {} {:?}, found {} {:?}", x.0, x.1, y.0, y.1))
            .unwrap_or_else(|| format!("expected {} tensors, found {}", a.len(), b.len()));
        return Err(Error::IncompatibleCheckpoint {
            component: component.into(),
            reason,
        });
    }
    Ok(())
}
