//! Flat `key = value` run configuration.
//!
//! Every key has a default; unknown or repeated keys are rejected before any
//! work starts. `#` starts a comment line.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::alignment::{LossKind, TrainConfig};
use crate::corpus::SynthParams;
use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::model::ModelConfig;
use crate::molecular::MolMode;

#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    pub corpus: PathBuf,
    pub split: PathBuf,
    pub checkpoint: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: "corpus.txt".into(),
            split: "split.tsv".into(),
            checkpoint: "model.ckpt".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub test_fraction: f64,
    pub synth: SynthParams,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            test_fraction: 0.2,
            synth: SynthParams::default(),
            paths: Paths::default(),
        }
    }
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("eval.episodes", "few-shot episodes per run"),
    ("eval.pool_size", "candidates per fixed-pool retrieval task"),
    ("eval.queries", "query spectra per class and episode"),
    (
        "eval.shared_pool",
        "reuse one candidate pool for all spectra of a molecule",
    ),
    ("eval.shot", "support spectra per class and episode"),
    ("eval.way", "classes per episode"),
    ("mol.activation", "feed-forward activation: gelu or relu"),
    ("mol.d_model", "molecular transformer width"),
    ("mol.ffn_hidden", "molecular feed-forward width"),
    ("mol.heads", "molecular attention heads"),
    ("mol.layers", "molecular transformer blocks"),
    ("mol.lora_alpha", "LoRA scale numerator; scale = alpha / rank"),
    ("mol.lora_rank", "LoRA rank on q/k/v"),
    ("mol.max_len", "token budget including CLS"),
    ("mol.mode", "lora, frozen or full"),
    ("paths.checkpoint", "checkpoint file"),
    ("paths.corpus", "record file"),
    ("paths.reports", "report directory"),
    ("paths.split", "split file"),
    ("seed", "global seed for every random stream"),
    ("spectral.activation", "feed-forward activation: gelu or relu"),
    ("spectral.d_embed", "shared embedding dimension of both encoders"),
    ("spectral.d_model", "spectral transformer width"),
    ("spectral.ffn_hidden", "spectral feed-forward width"),
    (
        "spectral.fourier",
        "use the Gaussian Fourier projection (false: linear mass lift)",
    ),
    ("spectral.fourier_d", "Fourier frequencies D (2D channels)"),
    ("spectral.heads", "spectral attention heads"),
    ("spectral.intensity_hidden", "intensity MLP width"),
    (
        "spectral.intensity_mlp",
        "pass intensities through the MLP (false: raw scalar)",
    ),
    ("spectral.layers", "spectral transformer blocks"),
    ("spectral.max_peaks", "peaks kept per spectrum"),
    ("spectral.sigma", "standard deviation of the Fourier frequencies"),
    ("split.test_fraction", "fraction of scaffolds held out"),
    ("synth.n_fragment_types", "synthetic fragment alphabet size"),
    ("synth.n_scaffolds", "synthetic molecules"),
    ("synth.noise_level", "synthetic m/z and intensity jitter"),
    ("synth.spectra_per_scaffold", "synthetic spectra per molecule"),
    ("train.batch_size", "pairs per optimizer step"),
    ("train.beta1", "Adam first-moment decay"),
    ("train.beta2", "Adam second-moment decay"),
    ("train.checkpoint_every", "save every n epochs (0: only at the end)"),
    (
        "train.dedupe_batch_scaffolds",
        "batches hold pairwise distinct scaffolds",
    ),
    ("train.epochs", "training epochs"),
    ("train.eps", "Adam epsilon"),
    ("train.grad_clip", "global gradient-norm clip, or off"),
    ("train.loss", "info_nce or mse"),
    ("train.lr", "Adam learning rate"),
    ("train.tau", "InfoNCE temperature"),
    (
        "train.warmup_epochs",
        "leading epochs that train the whole molecular encoder",
    ),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| Error::Config {
        key: key.to_string(),
        reason: format!("cannot parse {value:?}: {e}"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config {
            key: key.to_string(),
            reason: format!("expected true or false, got {value:?}"),
        }),
    }
}

fn bad(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.model.spectral;
        let m = &mut self.model.molecular;
        let t = &mut self.train;
        let e = &mut self.eval;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "spectral.activation" => s.activation = value.parse().map_err(|r: String| bad(key, r))?,
            "spectral.d_embed" => s.d_embed = parse(key, value)?,
            "spectral.d_model" => s.d_model = parse(key, value)?,
            "spectral.ffn_hidden" => s.ffn_hidden = parse(key, value)?,
            "spectral.fourier" => s.fourier = parse_bool(key, value)?,
            "spectral.fourier_d" => s.fourier_d = parse(key, value)?,
            "spectral.heads" => s.heads = parse(key, value)?,
            "spectral.intensity_hidden" => s.intensity_hidden = parse(key, value)?,
            "spectral.intensity_mlp" => s.intensity_mlp = parse_bool(key, value)?,
            "spectral.layers" => s.layers = parse(key, value)?,
            "spectral.max_peaks" => s.max_peaks = parse(key, value)?,
            "spectral.sigma" => s.sigma = parse(key, value)?,
            "mol.activation" => m.activation = value.parse().map_err(|r: String| bad(key, r))?,
            "mol.d_model" => m.d_model = parse(key, value)?,
            "mol.ffn_hidden" => m.ffn_hidden = parse(key, value)?,
            "mol.heads" => m.heads = parse(key, value)?,
            "mol.layers" => m.layers = parse(key, value)?,
            "mol.lora_alpha" => m.lora_alpha = parse(key, value)?,
            "mol.lora_rank" => m.lora_rank = parse(key, value)?,
            "mol.max_len" => m.max_len = parse(key, value)?,
            "mol.mode" => m.mode = value.parse::<MolMode>()?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.beta1" => t.adam.beta1 = parse(key, value)?,
            "train.beta2" => t.adam.beta2 = parse(key, value)?,
            "train.checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "train.dedupe_batch_scaffolds" => t.dedupe_batch_scaffolds = parse_bool(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.eps" => t.adam.epsilon = parse(key, value)?,
            "train.grad_clip" => {
                t.grad_clip = match value {
                    "off" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "train.loss" => t.loss = value.parse::<LossKind>()?,
            "train.lr" => t.adam.learning_rate = parse(key, value)?,
            "train.tau" => t.tau = parse(key, value)?,
            "train.warmup_epochs" => t.warmup_epochs = parse(key, value)?,
            "eval.episodes" => e.episodes = parse(key, value)?,
            "eval.pool_size" => e.pool_size = parse(key, value)?,
            "eval.queries" => e.queries = parse(key, value)?,
            "eval.shared_pool" => e.shared_pool = parse_bool(key, value)?,
            "eval.shot" => e.shot = parse(key, value)?,
            "eval.way" => e.way = parse(key, value)?,
            "split.test_fraction" => self.test_fraction = parse(key, value)?,
            "synth.n_fragment_types" => self.synth.n_fragment_types = parse(key, value)?,
            "synth.n_scaffolds" => self.synth.n_scaffolds = parse(key, value)?,
            "synth.noise_level" => self.synth.noise_level = parse(key, value)?,
            "synth.spectra_per_scaffold" => self.synth.spectra_per_scaffold = parse(key, value)?,
            "paths.checkpoint" => self.paths.checkpoint = value.into(),
            "paths.corpus" => self.paths.corpus = value.into(),
            "paths.reports" => self.paths.reports = value.into(),
            "paths.split" => self.paths.split = value.into(),
            _ => return Err(bad(key, "unknown key")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = &self.model.spectral;
        let m = &self.model.molecular;
        let t = &self.train;
        let e = &self.eval;
        let v = match key {
            "seed" => self.seed.to_string(),
            "spectral.activation" => s.activation.as_str().into(),
            "spectral.d_embed" => s.d_embed.to_string(),
            "spectral.d_model" => s.d_model.to_string(),
            "spectral.ffn_hidden" => s.ffn_hidden.to_string(),
            "spectral.fourier" => s.fourier.to_string(),
            "spectral.fourier_d" => s.fourier_d.to_string(),
            "spectral.heads" => s.heads.to_string(),
            "spectral.intensity_hidden" => s.intensity_hidden.to_string(),
            "spectral.intensity_mlp" => s.intensity_mlp.to_string(),
            "spectral.layers" => s.layers.to_string(),
            "spectral.max_peaks" => s.max_peaks.to_string(),
            "spectral.sigma" => s.sigma.to_string(),
            "mol.activation" => m.activation.as_str().into(),
            "mol.d_model" => m.d_model.to_string(),
            "mol.ffn_hidden" => m.ffn_hidden.to_string(),
            "mol.heads" => m.heads.to_string(),
            "mol.layers" => m.layers.to_string(),
            "mol.lora_alpha" => m.lora_alpha.to_string(),
            "mol.lora_rank" => m.lora_rank.to_string(),
            "mol.max_len" => m.max_len.to_string(),
            "mol.mode" => m.mode.as_str().into(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.beta1" => t.adam.beta1.to_string(),
            "train.beta2" => t.adam.beta2.to_string(),
            "train.checkpoint_every" => t.checkpoint_every.to_string(),
            "train.dedupe_batch_scaffolds" => t.dedupe_batch_scaffolds.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.eps" => t.adam.epsilon.to_string(),
            "train.grad_clip" => t.grad_clip.map_or("off".into(), |c| c.to_string()),
            "train.loss" => t.loss.as_str().into(),
            "train.lr" => t.adam.learning_rate.to_string(),
            "train.tau" => t.tau.to_string(),
            "train.warmup_epochs" => t.warmup_epochs.to_string(),
            "eval.episodes" => e.episodes.to_string(),
            "eval.pool_size" => e.pool_size.to_string(),
            "eval.queries" => e.queries.to_string(),
            "eval.shared_pool" => e.shared_pool.to_string(),
            "eval.shot" => e.shot.to_string(),
            "eval.way" => e.way.to_string(),
            "split.test_fraction" => self.test_fraction.to_string(),
            "synth.n_fragment_types" => self.synth.n_fragment_types.to_string(),
            "synth.n_scaffolds" => self.synth.n_scaffolds.to_string(),
            "synth.noise_level" => self.synth.noise_level.to_string(),
            "synth.spectra_per_scaffold" => self.synth.spectra_per_scaffold.to_string(),
            "paths.checkpoint" => self.paths.checkpoint.display().to_string(),
            "paths.corpus" => self.paths.corpus.display().to_string(),
            "paths.reports" => self.paths.reports.display().to_string(),
            "paths.split" => self.paths.split.display().to_string(),
            _ => return None,
        };
        Some(v)
    }

    /// Parses `text` on top of the defaults and validates the result.
    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        config.apply_text(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Applies `key = value` lines without validating.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(bad(line, format!("line {} is not `key = value`", n + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(bad(k, "repeated key"));
            }
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_text(&text)
    }

    /// Canonical key-sorted text of the keys accepted by `filter`.
    pub fn to_text_where(&self, filter: impl Fn(&str) -> bool) -> String {
        let mut out = String::new();
        for (key, _) in KEYS.iter().filter(|(k, _)| filter(k)) {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.get(key).expect("every listed key has a value"));
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        self.to_text_where(|_| true)
    }

    /// Keys that determine a trained model: architecture, training and seed.
    pub fn model_text(&self) -> String {
        self.to_text_where(|k| {
            k == "seed" || k.starts_with("spectral.") || k.starts_with("mol.") || k.starts_with("train.")
        })
    }

    /// First 16 hex digits of SHA-256 over the canonical text, paths excluded.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text_where(|k| !k.starts_with("paths.")).as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Model shapes with the shared embedding dimension filled in.
    pub fn model_config(&self) -> ModelConfig {
        let mut m = self.model.clone();
        m.molecular.d_embed = m.spectral.d_embed;
        m
    }

    /// Training settings seeded from the global seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.model.spectral;
        let m = &self.model.molecular;
        let positive = [
            ("spectral.d_model", s.d_model),
            ("spectral.d_embed", s.d_embed),
            ("spectral.fourier_d", s.fourier_d),
            ("spectral.max_peaks", s.max_peaks),
            ("spectral.heads", s.heads),
            ("spectral.ffn_hidden", s.ffn_hidden),
            ("spectral.intensity_hidden", s.intensity_hidden),
            ("mol.d_model", m.d_model),
            ("mol.heads", m.heads),
            ("mol.ffn_hidden", m.ffn_hidden),
            ("mol.lora_rank", m.lora_rank),
            ("eval.pool_size", self.eval.pool_size),
            ("eval.way", self.eval.way),
            ("eval.shot", self.eval.shot),
            ("eval.queries", self.eval.queries),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(bad(key, "must be positive"));
            }
        }
        if !s.d_model.is_multiple_of(s.heads) {
            return Err(bad(
                "spectral.heads",
                format!("must divide spectral.d_model = {}", s.d_model),
            ));
        }
        if !m.d_model.is_multiple_of(m.heads) {
            return Err(bad("mol.heads", format!("must divide mol.d_model = {}", m.d_model)));
        }
        if m.max_len < 2 {
            return Err(bad("mol.max_len", "must be at least 2"));
        }
        if !(s.sigma > 0.0 && s.sigma.is_finite()) {
            return Err(bad("spectral.sigma", "must be positive"));
        }
        if !(m.lora_alpha.is_finite()) {
            return Err(bad("mol.lora_alpha", "must be finite"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(bad("split.test_fraction", "must lie in (0, 1)"));
        }
        if let Some(c) = self.train.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return Err(bad("train.grad_clip", "must be positive or off"));
            }
        }
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let c = RunConfig::default();
        let text = c.to_text();
        assert_eq!(text.lines().count(), KEYS.len());
        let back = RunConfig::from_text(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn keys_are_sorted_and_all_gettable() {
        let c = RunConfig::default();
        for w in KEYS.windows(2) {
            assert!(w[0].0 < w[1].0, "{} / {}", w[0].0, w[1].0);
        }
        for (k, _) in KEYS {
            assert!(c.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn unknown_and_repeated_keys_fail_closed() {
        let e = RunConfig::from_text("train.epoch = 3\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "train.epoch"));
        let e = RunConfig::from_text("seed = 1\nseed = 2\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "seed"));
        assert!(RunConfig::from_text("no equals sign\n").is_err());
    }

    #[test]
    fn values_are_parsed_and_validated() {
        let c = RunConfig::from_text(
            "# comment\nseed = 7\nmol.mode = frozen\ntrain.grad_clip = 1.5\n\nspectral.fourier = false\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.model.molecular.mode, MolMode::Frozen);
        assert_eq!(c.train.grad_clip, Some(1.5));
        assert!(!c.model.spectral.fourier);
        assert_eq!(c.train_config().seed, 7);
        assert!(RunConfig::from_text("spectral.heads = 3\n").is_err());
        assert!(RunConfig::from_text("train.tau = -1\n").is_err());
        assert!(RunConfig::from_text("spectral.fourier = yes\n").is_err());
        assert!(RunConfig::from_text("mol.mode = adapters\n").is_err());
    }

    #[test]
    fn fingerprint_ignores_paths_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.reports = "elsewhere".into();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 16);
    }

    #[test]
    fn shared_embedding_dimension() {
        let c = RunConfig::from_text("spectral.d_embed = 32\n").unwrap();
        assert_eq!(c.model_config().molecular.d_embed, 32);
    }
}
