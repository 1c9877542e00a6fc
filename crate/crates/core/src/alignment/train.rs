use std::collections::HashSet;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::losses::{info_nce, mse_alignment};
use crate::corpus::{ScaffoldKey, SpectrumRecord};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{clip_grad_norm, optimizer_step, AdamConfig, Binder, Graph, OptimizerState};
use crate::rng::{substream, TRAIN_SHUFFLE};
use crate::spectral::PreprocessedSpectrum;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    InfoNce,
    Mse,
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "info_nce" => Ok(LossKind::InfoNce),
            "mse" => Ok(LossKind::Mse),
            _ => Err(Error::Config {
                key: "train.loss".into(),
                reason: format!("expected info_nce or mse, got {s:?}"),
            }),
        }
    }
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::InfoNce => "info_nce",
            LossKind::Mse => "mse",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub adam: AdamConfig,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Save every this many epochs; 0 disables periodic saves.
    pub checkpoint_every: usize,
    /// Build batches whose members have pairwise distinct scaffolds.
    pub dedupe_batch_scaffolds: bool,
    /// Leading epochs that train the whole molecular encoder before the
    /// configured molecular mode takes over.
    pub warmup_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau: 0.07,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            loss: LossKind::InfoNce,
            adam: AdamConfig::default(),
            grad_clip: None,
            checkpoint_every: 0,
            dedupe_batch_scaffolds: false,
            warmup_epochs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config {
                key: "train.tau".into(),
                reason: format!("must be positive, got {}", self.tau),
            });
        }
        let min_batch = if self.loss == LossKind::InfoNce { 2 } else { 1 };
        if self.batch_size < min_batch {
            return Err(Error::Config {
                key: "train.batch_size".into(),
                reason: format!("must be at least {min_batch} for {}", self.loss.as_str()),
            });
        }
        if self.adam.learning_rate.is_nan() || self.adam.learning_rate <= 0.0 {
            return Err(Error::Config {
                key: "train.lr".into(),
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

impl EpochLog {
    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{:.3}", self.epoch, self.mean_loss, self.wall_seconds)
    }
}

struct Example {
    spectrum: PreprocessedSpectrum,
    tokens: Vec<usize>,
    scaffold: ScaffoldKey,
}

/// Shuffled index batches for one epoch. Short tails are kept only when
/// `keep_short`.
fn epoch_batches(order: &[usize], examples: &[Example], config: &TrainConfig, keep_short: bool) -> Vec<Vec<usize>> {
    let b = config.batch_size;
    let mut batches: Vec<Vec<usize>> = if config.dedupe_batch_scaffolds {
        let mut pending: Vec<usize> = order.to_vec();
        let mut out = Vec::new();
        while !pending.is_empty() {
            let mut batch = Vec::with_capacity(b);
            let mut seen = HashSet::new();
            let mut rest = Vec::with_capacity(pending.len());
            for &i in &pending {
                if batch.len() < b && seen.insert(&examples[i].scaffold) {
                    batch.push(i);
                } else {
                    rest.push(i);
                }
            }
            out.push(batch);
            pending = rest;
        }
        out
    } else {
        order.chunks(b).map(<[usize]>::to_vec).collect()
    };
    if !keep_short {
        batches.retain(|x| x.len() == b);
    }
    batches
}

/// Contrastive training over `records`, one optimizer step per batch.
///
/// `on_epoch` runs after every epoch with the model and the history so far.
pub fn train_with(
    model: &mut Model,
    records: &[&SpectrumRecord],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&Model, &[EpochLog]) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let examples = records
        .iter()
        .map(|r| {
            Ok(Example {
                spectrum: model.preprocess(r)?,
                tokens: model.tokenize(&r.smiles)?,
                scaffold: r.scaffold()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let target_mode = model.molecular.config.mode;
    let mut rng = substream(config.seed, TRAIN_SHUFFLE);
    let mut opt = OptimizerState::new(config.adam);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        if config.warmup_epochs > 0 {
            let mode = if epoch <= config.warmup_epochs {
                crate::molecular::MolMode::Full
            } else {
                target_mode
            };
            model.set_molecular_mode(mode);
        }
        order.shuffle(&mut rng);
        let batches = epoch_batches(&order, &examples, config, config.loss == LossKind::Mse);
        if batches.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} training records cannot fill a batch of {}",
                examples.len(),
                config.batch_size
            )));
        }
        let mut total = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            total += train_step(model, &examples, batch, config, &mut opt).map_err(|e| match e {
                Error::NonFinite(_) | Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { epoch, batch: bi },
                other => other,
            })?;
        }
        history.push(EpochLog {
            epoch,
            mean_loss: total / batches.len() as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        on_epoch(model, &history)?;
    }
    if config.warmup_epochs > 0 {
        model.set_molecular_mode(target_mode);
    }
    Ok(history)
}

pub fn train(model: &mut Model, records: &[&SpectrumRecord], config: &TrainConfig) -> Result<Vec<EpochLog>> {
    train_with(model, records, config, |_, _| Ok(()))
}

fn train_step(
    model: &mut Model,
    examples: &[Example],
    batch: &[usize],
    config: &TrainConfig,
    opt: &mut OptimizerState,
) -> Result<f64> {
    let (loss_value, grads) = {
        let mut g = Graph::new();
        let mut b = Binder::new(&model.store);
        let specs: Vec<&PreprocessedSpectrum> = batch.iter().map(|&i| &examples[i].spectrum).collect();
        let toks: Vec<&[usize]> = batch.iter().map(|&i| examples[i].tokens.as_slice()).collect();
        let zs = model.spectral.forward(&mut g, &mut b, &specs)?;
        let zm = model.molecular.forward(&mut g, &mut b, &toks)?;
        let loss = match config.loss {
            LossKind::InfoNce => info_nce(&mut g, zs, zm, config.tau)?,
            LossKind::Mse => mse_alignment(&mut g, zs, zm)?,
        };
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        let mut grads = g.backward(loss)?;
        (value, b.gradients(&mut grads))
    };
    for (path, grad) in &grads {
        model.store.accumulate_grad(path, grad)?;
    }
    if let Some(max) = config.grad_clip {
        clip_grad_norm(&mut model.store, max);
    }
    optimizer_step(&mut model.store, opt)?;
    Ok(loss_value)
}
