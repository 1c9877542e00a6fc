use std::str::FromStr;

use rand::Rng;

use super::vocab::{SmilesVocabulary, PAD};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::numerics::{Binder, Graph, ParameterStore, Tensor, Var};
use crate::transformer::{self, Activation, BlockShape, LoraShape, WeightInit};

pub const PREFIX: &str = "mol";

/// Which molecular parameters train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MolMode {
    /// Base frozen; q/k/v adapters and the output projection train.
    Lora,
    /// Base frozen, no adapters; only the output projection trains.
    Frozen,
    /// Everything trains, no adapters.
    Full,
}

impl FromStr for MolMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lora" => Ok(MolMode::Lora),
            "frozen" => Ok(MolMode::Frozen),
            "full" => Ok(MolMode::Full),
            _ => Err(Error::Config {
                key: "mol.mode".into(),
                reason: format!("expected lora, frozen or full, got {s:?}"),
            }),
        }
    }
}

impl MolMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MolMode::Lora => "lora",
            MolMode::Frozen => "frozen",
            MolMode::Full => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MolecularConfig {
    pub d_model: usize,
    pub d_embed: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub max_len: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub mode: MolMode,
    pub activation: Activation,
}

impl Default for MolecularConfig {
    fn default() -> Self {
        MolecularConfig {
            d_model: 128,
            d_embed: 128,
            layers: 4,
            heads: 8,
            ffn_hidden: 256,
            max_len: 128,
            lora_rank: 4,
            lora_alpha: 4.0,
            mode: MolMode::Lora,
            activation: Activation::Gelu,
        }
    }
}

impl MolecularConfig {
    pub fn lora_scale(&self) -> f64 {
        self.lora_alpha / self.lora_rank as f64
    }

    fn block_shape(&self) -> BlockShape {
        BlockShape {
            d_model: self.d_model,
            heads: self.heads,
            ffn_hidden: self.ffn_hidden,
            activation: self.activation,
        }
    }
}

fn p(name: &str) -> String {
    format!("{PREFIX}.{name}")
}

pub fn is_adapter(path: &str) -> bool {
    path.ends_with(".lora_down") || path.ends_with(".lora_up")
}

pub fn is_output_projection(path: &str) -> bool {
    path.starts_with("mol.out.")
}

/// SMILES transformer with optional LoRA adapters on the attention
/// q/k/v projections.
#[derive(Debug, Clone, PartialEq)]
pub struct MolecularEncoder {
    pub config: MolecularConfig,
    pub vocab: SmilesVocabulary,
}

impl MolecularEncoder {
    pub fn init(config: MolecularConfig, store: &mut ParameterStore, rng: &mut impl Rng) -> Result<Self> {
        if config.mode == MolMode::Lora && config.lora_rank == 0 {
            return Err(Error::InvalidArgument("LoRA rank must be positive".into()));
        }
        let vocab = SmilesVocabulary::default();
        let d = config.d_model;
        store.insert_normal(&p("tok_emb"), &[vocab.len(), d], 1.0, rng, true);
        store.insert_normal(&p("pos_emb"), &[config.max_len, d], 0.1, rng, true);
        let lora = (config.mode == MolMode::Lora).then_some(LoraShape {
            rank: config.lora_rank,
            scale: config.lora_scale(),
        });
        let shape = config.block_shape();
        for i in 0..config.layers {
            transformer::init_block(store, &p(&format!("block{i}")), &shape, lora, WeightInit::FanIn, rng)?;
        }
        store.insert(p("final_ln.gain"), Tensor::filled(&[d], 1.0), true);
        store.insert(p("final_ln.bias"), Tensor::zeros(&[d]), true);
        store.insert_normal(
            &p("out.weight"),
            &[d, config.d_embed],
            1.0 / (d as f64).sqrt(),
            rng,
            true,
        );
        store.insert(p("out.bias"), Tensor::zeros(&[config.d_embed]), true);
        let enc = MolecularEncoder { config, vocab };
        enc.apply_mode(store, enc.config.mode);
        Ok(enc)
    }

    /// Sets trainable flags on every `mol.*` parameter for `mode`.
    pub fn apply_mode(&self, store: &mut ParameterStore, mode: MolMode) {
        let paths: Vec<String> = store
            .iter()
            .map(|(k, _)| k.clone())
            .filter(|k| k.starts_with("mol."))
            .collect();
        for path in paths {
            let trainable = match mode {
                MolMode::Full => true,
                MolMode::Lora => is_adapter(&path) || is_output_projection(&path),
                MolMode::Frozen => is_output_projection(&path),
            };
            store
                .set_trainable(&path, trainable)
                .expect("path taken from the store");
        }
    }

    pub fn tokenize(&self, smiles: &str) -> Result<Vec<usize>> {
        self.vocab.tokenize(smiles, self.config.max_len)
    }

    /// Unit-norm embeddings, one row per token sequence. PAD positions are
    /// dropped before the transformer.
    pub fn forward<'a>(&self, g: &mut Graph<'a>, b: &mut Binder<'a>, seqs: &[&[usize]]) -> Result<Var> {
        self.forward_with(g, b, seqs, self.config.mode == MolMode::Lora)
    }

    /// As [`forward`](Self::forward); `use_adapters = false` runs the base
    /// model alone.
    pub fn forward_with<'a>(
        &self,
        g: &mut Graph<'a>,
        b: &mut Binder<'a>,
        seqs: &[&[usize]],
        use_adapters: bool,
    ) -> Result<Var> {
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        let mut lengths = Vec::with_capacity(seqs.len());
        for seq in seqs {
            if seq.len() > self.config.max_len {
                return Err(Error::SequenceTooLong {
                    len: seq.len(),
                    max: self.config.max_len,
                });
            }
            if seq.first() != Some(&super::vocab::CLS) {
                return Err(Error::InvalidArgument("token sequence must start with CLS".into()));
            }
            let before = ids.len();
            for (pos, &id) in seq.iter().enumerate() {
                if id == PAD {
                    continue;
                }
                if id >= self.vocab.len() {
                    return Err(Error::InvalidArgument(format!("token id {id} outside the vocabulary")));
                }
                ids.push(id);
                positions.push(pos);
            }
            lengths.push(ids.len() - before);
        }
        let tok = b.param(g, &p("tok_emb"))?;
        let pos = b.param(g, &p("pos_emb"))?;
        let te = g.select_rows(tok, &ids)?;
        let pe = g.select_rows(pos, &positions)?;
        let mut x = g.add(te, pe)?;
        let segments = transformer::pack_segments(&lengths);
        let shape = self.config.block_shape();
        let scale = use_adapters.then(|| self.config.lora_scale());
        for i in 0..self.config.layers {
            x = transformer::encoder_block(g, b, &p(&format!("block{i}")), x, &segments, &shape, scale)?;
        }
        let starts: Vec<usize> = segments.iter().map(|s| s.start).collect();
        let cls = g.select_rows(x, &starts)?;
        let cls = transformer::layer_norm(g, b, cls, &p("final_ln"))?;
        let z = transformer::linear(g, b, cls, &p("out.weight"), &p("out.bias"))?;
        g.l2_normalize_rows(z)
    }

    pub fn encode_tokens(&self, store: &ParameterStore, seqs: &[&[usize]]) -> Result<Vec<Embedding>> {
        let mut g = Graph::new();
        let mut b = Binder::inference(store);
        let z = self.forward(&mut g, &mut b, seqs)?;
        let t = g.value(z);
        Ok((0..t.rows())
            .map(|r| Embedding::normalized(t.row(r).to_vec()))
            .collect())
    }

    pub fn encode(&self, store: &ParameterStore, smiles: &str) -> Result<Embedding> {
        let t = self.tokenize(smiles)?;
        Ok(self.encode_tokens(store, &[&t])?.remove(0))
    }

    pub fn encode_batch(&self, store: &ParameterStore, smiles: &[&str]) -> Result<Vec<Embedding>> {
        let toks = smiles.iter().map(|s| self.tokenize(s)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[usize]> = toks.iter().map(Vec::as_slice).collect();
        self.encode_tokens(store, &refs)
    }
}

/// Number of scalar parameters in all `mol.*` LoRA adapters.
pub fn adapter_parameter_count(store: &ParameterStore) -> usize {
    store.count_where(|p| p.starts_with("mol.") && is_adapter(p))
}

/// `(adapters + output projection) / all molecular parameters`.
pub fn trainable_parameter_fraction(enc: &MolecularEncoder, store: &ParameterStore) -> Result<f64> {
    if enc.config.mode != MolMode::Lora {
        return Err(Error::InvalidArgument(
            "trainable fraction is defined for lora mode".into(),
        ));
    }
    let total = store.count_where(|p| p.starts_with("mol."));
    let trainable = store.count_where(|p| p.starts_with("mol.") && (is_adapter(p) || is_output_projection(p)));
    Ok(trainable as f64 / total as f64)
}
