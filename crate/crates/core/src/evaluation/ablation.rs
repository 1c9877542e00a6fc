use std::collections::BTreeMap;
use std::str::FromStr;

use super::fewshot::fewshot;
use super::retrieval::{fixed_pool_retrieval, EmbeddingIndex};
use super::stats::{mean, population_std};
use crate::alignment::{train, LossKind};
use crate::config::RunConfig;
use crate::corpus::{DatasetSplit, Side, SpectrumRecord};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::molecular::MolMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Full,
    NoFourier,
    Mse,
    FrozenMol,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoFourier, Variant::Mse, Variant::FrozenMol];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoFourier => "no_fourier",
            Variant::Mse => "mse",
            Variant::FrozenMol => "frozen_mol",
        }
    }

    /// `base` with this variant's single change applied.
    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoFourier => c.model.spectral.fourier = false,
            Variant::Mse => c.train.loss = LossKind::Mse,
            Variant::FrozenMol => c.model.molecular.mode = MolMode::Frozen,
        }
        c
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationMetrics {
    pub hit_at_1: f64,
    pub hit_at_10: f64,
    pub fewshot_mean: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub variant: Variant,
    pub seed: u64,
    /// `Err` holds the failure message; siblings still run.
    pub outcome: std::result::Result<AblationMetrics, String>,
}

/// Trains and evaluates one configuration on a fixed split.
pub fn train_and_evaluate(
    config: &RunConfig,
    records: &[SpectrumRecord],
    split: &DatasetSplit,
) -> Result<AblationMetrics> {
    let train_recs = split.select(records, Side::Train);
    let test_recs = split.select(records, Side::Test);
    let mut model = Model::init(&config.model_config(), config.seed)?;
    let history = train(&mut model, &train_recs, &config.train_config())?;
    let index = EmbeddingIndex::build(&model, &test_recs)?;
    let fp = config.fingerprint();
    let e = &config.eval;
    let retrieval = fixed_pool_retrieval(&index, &test_recs, e.pool_size, e.shared_pool, config.seed, &fp)?;
    let episodic = fewshot(
        &index.spectra,
        &test_recs,
        e.way,
        e.shot,
        e.queries,
        e.episodes,
        config.seed,
        &fp,
    )?;
    Ok(AblationMetrics {
        hit_at_1: retrieval.hit_at_k[&1],
        hit_at_10: retrieval.hit_at_k[&10],
        fewshot_mean: episodic.mean,
        final_loss: history.last().map_or(f64::NAN, |h| h.mean_loss),
    })
}

/// Every `(variant, seed)` combination, variants outermost.
pub fn run_ablations(
    records: &[SpectrumRecord],
    split: &DatasetSplit,
    base: &RunConfig,
    seeds: &[u64],
    variants: &[Variant],
) -> Vec<AblationRun> {
    let mut runs = Vec::with_capacity(variants.len() * seeds.len());
    for &variant in variants {
        for &seed in seeds {
            let mut config = variant.apply(base);
            config.seed = seed;
            let outcome = train_and_evaluate(&config, records, split).map_err(|e| e.to_string());
            runs.push(AblationRun { variant, seed, outcome });
        }
    }
    runs
}

/// Mean and population std of Hit@1 per variant over its successful runs.
pub fn variant_means(runs: &[AblationRun]) -> BTreeMap<Variant, (f64, f64, usize)> {
    let mut by: BTreeMap<Variant, Vec<f64>> = BTreeMap::new();
    for r in runs {
        if let Ok(m) = &r.outcome {
            by.entry(r.variant).or_default().push(m.hit_at_1);
        }
    }
    by.into_iter()
        .map(|(v, xs)| (v, (mean(&xs), population_std(&xs), xs.len())))
        .collect()
}

/// One row per run, then one `mean` row per variant.
pub fn ablation_table(runs: &[AblationRun]) -> String {
    let mut out = String::from("variant\tseed\thit_at_1\thit_at_10\tfewshot_mean\tfinal_loss\n");
    for r in runs {
        match &r.outcome {
            Ok(m) => out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.variant.name(),
                r.seed,
                m.hit_at_1,
                m.hit_at_10,
                m.fewshot_mean,
                m.final_loss
            )),
            Err(e) => out.push_str(&format!(
                "{}\t{}\tfailed: {}\n",
                r.variant.name(),
                r.seed,
                e.replace(['\t', '\n'], " ")
            )),
        }
    }
    let mut grouped: BTreeMap<Variant, Vec<&AblationMetrics>> = BTreeMap::new();
    for r in runs {
        if let Ok(m) = &r.outcome {
            grouped.entry(r.variant).or_default().push(m);
        }
    }
    for (v, ms) in grouped {
        let col = |f: fn(&AblationMetrics) -> f64| mean(&ms.iter().map(|m| f(m)).collect::<Vec<_>>());
        out.push_str(&format!(
            "{}\tmean\t{}\t{}\t{}\t{}\n",
            v.name(),
            col(|m| m.hit_at_1),
            col(|m| m.hit_at_10),
            col(|m| m.fewshot_mean),
            col(|m| m.final_loss)
        ));
    }
    out
}

/// `method<TAB>mean<TAB>std` of Hit@1 per variant.
pub fn ablation_error_bars(runs: &[AblationRun]) -> String {
    variant_means(runs)
        .into_iter()
        .map(|(v, (m, s, _))| format!("{}\t{}\t{}\n", v.name(), m, s))
        .collect()
}
