//! Shared fixtures for the benchmarks.

use msalign::corpus::{generate_synthetic_corpus, SpectrumRecord, SynthParams};
use msalign::model::ModelConfig;
use msalign::Model;

/// The default synthetic corpus.
pub fn corpus() -> Vec<SpectrumRecord> {
    generate_synthetic_corpus(&SynthParams::default(), 0).expect("default synthetic params are valid")
}

/// A desk-scale model at default width.
pub fn model() -> Model {
    Model::init(&ModelConfig::default(), 0).expect("default config is consistent")
}
