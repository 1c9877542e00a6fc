//! The paired spectral and molecular encoders over one parameter store.

use rayon::prelude::*;

use crate::corpus::SpectrumRecord;
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::molecular::{MolMode, MolecularConfig, MolecularEncoder};
use crate::numerics::ParameterStore;
use crate::rng::{substream, INIT};
use crate::spectral::{preprocess, PreprocessedSpectrum, SpectralConfig, SpectralEncoder};

/// Sequences per forward pass when encoding outside training.
pub const ENCODE_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelConfig {
    pub spectral: SpectralConfig,
    pub molecular: MolecularConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spectral: SpectralEncoder,
    pub molecular: MolecularEncoder,
    pub store: ParameterStore,
}

impl Model {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Model> {
        if config.spectral.d_embed != config.molecular.d_embed {
            return Err(Error::InvalidArgument(format!(
                "embedding dimensions differ: spectral {} vs molecular {}",
                config.spectral.d_embed, config.molecular.d_embed
            )));
        }
        let mut store = ParameterStore::new();
        let mut rng = substream(seed, INIT);
        let spectral = SpectralEncoder::init(config.spectral.clone(), seed, &mut store, &mut rng)?;
        let molecular = MolecularEncoder::init(config.molecular.clone(), &mut store, &mut rng)?;
        Ok(Model {
            spectral,
            molecular,
            store,
        })
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            spectral: self.spectral.config.clone(),
            molecular: self.molecular.config.clone(),
        }
    }

    /// Switches the molecular trainable mask, e.g. after a warm-up phase.
    pub fn set_molecular_mode(&mut self, mode: MolMode) {
        self.molecular.apply_mode(&mut self.store, mode);
    }

    pub fn preprocess(&self, record: &SpectrumRecord) -> Result<PreprocessedSpectrum> {
        preprocess(record, self.spectral.config.max_peaks).map_err(|e| Error::Encoding {
            unit: record.record_id.clone(),
            source: Box::new(e),
        })
    }

    pub fn tokenize(&self, smiles: &str) -> Result<Vec<usize>> {
        self.molecular.tokenize(smiles).map_err(|e| Error::Encoding {
            unit: smiles.to_string(),
            source: Box::new(e),
        })
    }

    pub fn encode_spectra(&self, records: &[&SpectrumRecord]) -> Result<Vec<Embedding>> {
        let specs = records.iter().map(|r| self.preprocess(r)).collect::<Result<Vec<_>>>()?;
        let chunks: Vec<Result<Vec<Embedding>>> = specs
            .par_chunks(ENCODE_CHUNK)
            .zip(records.par_chunks(ENCODE_CHUNK))
            .map(|(chunk, recs)| {
                let refs: Vec<&PreprocessedSpectrum> = chunk.iter().collect();
                self.spectral
                    .encode_batch(&self.store, &refs)
                    .map_err(|e| Error::Encoding {
                        unit: recs[0].record_id.clone(),
                        source: Box::new(e),
                    })
            })
            .collect();
        flatten(chunks)
    }

    pub fn encode_molecules(&self, smiles: &[&str]) -> Result<Vec<Embedding>> {
        let toks = smiles.iter().map(|s| self.tokenize(s)).collect::<Result<Vec<_>>>()?;
        let chunks: Vec<Result<Vec<Embedding>>> = toks
            .par_chunks(ENCODE_CHUNK)
            .zip(smiles.par_chunks(ENCODE_CHUNK))
            .map(|(chunk, names)| {
                let refs: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
                self.molecular
                    .encode_tokens(&self.store, &refs)
                    .map_err(|e| Error::Encoding {
                        unit: names[0].to_string(),
                        source: Box::new(e),
                    })
            })
            .collect();
        flatten(chunks)
    }
}

fn flatten(chunks: Vec<Result<Vec<Embedding>>>) -> Result<Vec<Embedding>> {
    let mut out = Vec::new();
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}
