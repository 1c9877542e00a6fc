//! Compositional synthetic corpora.
//!
//! A molecule is a token string over a fragment alphabet. Each fragment owns
//! a base m/z, a base intensity and a short SMILES piece; a molecule's
//! spectrum carries one peak per fragment and its SMILES concatenates the
//! pieces. Pieces start with a heteroatom marker that never occurs inside a
//! piece, so the concatenation decodes uniquely. Held-out scaffolds are new
//! combinations of the same fragments, which keeps them identifiable.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::record::{Peak, SpectrumRecord};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub n_scaffolds: usize,
    pub spectra_per_scaffold: usize,
    pub n_fragment_types: usize,
    pub noise_level: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_scaffolds: 64,
            spectra_per_scaffold: 8,
            n_fragment_types: 16,
            noise_level: 0.05,
        }
    }
}

const MARKERS: [&str; 9] = ["N", "O", "S", "P", "F", "Cl", "Br", "I", "B"];
const LINKS: [&str; 3] = ["C", "=C", "#C"];
const MIN_FRAGMENTS: usize = 3;
const MAX_FRAGMENTS: usize = 6;
const MASS_RANGE: (f64, f64) = (40.0, 600.0);
const MIN_MASS_GAP: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub smiles: String,
    pub mz: f64,
    pub intensity: f64,
}

/// Piece `k`: marker `k mod 9` followed by the `k div 9`-th carbon suffix
/// (suffixes enumerated shortest first over `C`, `=C`, `#C`).
fn fragment_smiles(k: usize) -> String {
    let mut s = MARKERS[k % MARKERS.len()].to_string();
    let mut idx = k / MARKERS.len();
    // Bijective base-3 numbering: 0 → "", 1..=3 → one link, 4..=12 → two links, ...
    let mut links = Vec::new();
    while idx > 0 {
        idx -= 1;
        links.push(LINKS[idx % 3]);
        idx /= 3;
    }
    for l in links.iter().rev() {
        s.push_str(l);
    }
    s
}

pub fn fragment_alphabet(n: usize, rng: &mut impl Rng) -> Vec<Fragment> {
    let mut masses: Vec<f64> = Vec::with_capacity(n);
    while masses.len() < n {
        let m = rng.random_range(MASS_RANGE.0..MASS_RANGE.1);
        let gap = MIN_MASS_GAP.min((MASS_RANGE.1 - MASS_RANGE.0) / (2.0 * n as f64));
        if masses.iter().all(|x| (x - m).abs() >= gap) {
            masses.push(m);
        }
    }
    masses
        .into_iter()
        .enumerate()
        .map(|(k, mz)| Fragment {
            smiles: fragment_smiles(k),
            mz: (mz * 1e4).round() / 1e4,
            intensity: rng.random_range(50.0..1000.0f64).round(),
        })
        .collect()
}

fn letters(seed: &[u8], n: usize) -> String {
    let digest = Sha256::digest(seed);
    digest.iter().take(n).map(|b| (b'A' + b % 26) as char).collect()
}

/// Deterministic pseudo-InChIKey for a fragment token string.
pub fn synthetic_inchikey(tokens: &[usize]) -> String {
    let s = tokens.iter().map(usize::to_string).collect::<Vec<_>>().join(".");
    let skeleton = letters(format!("skeleton:{s}").as_bytes(), 14);
    let layer = letters(format!("layer:{s}").as_bytes(), 10);
    format!("{skeleton}-{layer}-N")
}

pub fn generate_synthetic_corpus(params: &SynthParams, seed: u64) -> Result<Vec<SpectrumRecord>> {
    let SynthParams {
        n_scaffolds,
        spectra_per_scaffold,
        n_fragment_types,
        noise_level,
    } = *params;
    if n_scaffolds < 4 || n_fragment_types < 8 || spectra_per_scaffold < 2 {
        return Err(Error::InvalidArgument(
            "synthetic corpus needs n_scaffolds >= 4, n_fragment_types >= 8, spectra_per_scaffold >= 2".into(),
        ));
    }
    if !(noise_level >= 0.0 && noise_level.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise_level must be >= 0, got {noise_level}"
        )));
    }
    let mut rng = rng::substream(seed, rng::SYNTH);
    let alphabet = fragment_alphabet(n_fragment_types, &mut rng);
    let max_len = MAX_FRAGMENTS.min(n_fragment_types);

    let mut seen_sets = HashSet::new();
    let mut seen_keys = HashSet::new();
    let mut molecules: Vec<Vec<usize>> = Vec::with_capacity(n_scaffolds);
    let mut attempts = 0usize;
    while molecules.len() < n_scaffolds {
        attempts += 1;
        if attempts > 200 * n_scaffolds + 10_000 {
            return Err(Error::InvalidArgument(format!(
                "cannot draw {n_scaffolds} distinct fragment sets from {n_fragment_types} fragment types"
            )));
        }
        let len = rng.random_range(MIN_FRAGMENTS..=max_len);
        let tokens = sample(&mut rng, n_fragment_types, len).into_vec();
        let mut set = tokens.clone();
        set.sort_unstable();
        let key = synthetic_inchikey(&tokens)[..14].to_string();
        if seen_sets.contains(&set) || seen_keys.contains(&key) {
            continue;
        }
        seen_sets.insert(set);
        seen_keys.insert(key);
        molecules.push(tokens);
    }

    let mut records = Vec::with_capacity(n_scaffolds * spectra_per_scaffold);
    for (mi, tokens) in molecules.iter().enumerate() {
        let smiles: String = tokens.iter().map(|&t| alphabet[t].smiles.as_str()).collect();
        let inchikey = synthetic_inchikey(tokens);
        for si in 0..spectra_per_scaffold {
            let peaks = tokens
                .iter()
                .map(|&t| {
                    let f = &alphabet[t];
                    let dz: f64 = StandardNormal.sample(&mut rng);
                    let di: f64 = StandardNormal.sample(&mut rng);
                    Peak {
                        mz: (f.mz + noise_level * dz).max(1e-3),
                        intensity: f.intensity * (noise_level * di).exp(),
                    }
                })
                .collect();
            records.push(SpectrumRecord {
                record_id: format!("SYN{mi:05}-{si:03}"),
                peaks,
                smiles: smiles.clone(),
                inchikey: inchikey.clone(),
                instrument_tag: Some("synthetic".into()),
            });
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{scaffold_key, validate_smiles};
    use std::collections::{BTreeMap, BTreeSet};

    #[test]
    fn counts() {
        let recs = generate_synthetic_corpus(&SynthParams::default(), 1).unwrap();
        assert_eq!(recs.len(), 512);
        let keys: BTreeSet<_> = recs.iter().map(|r| scaffold_key(&r.inchikey).unwrap()).collect();
        assert_eq!(keys.len(), 64);
        assert!(recs.iter().all(|r| validate_smiles(&r.smiles)));
    }

    #[test]
    fn zero_noise_spectra_identical_within_scaffold() {
        let p = SynthParams {
            noise_level: 0.0,
            ..SynthParams::default()
        };
        let recs = generate_synthetic_corpus(&p, 2).unwrap();
        let mut by_key: BTreeMap<String, Vec<&SpectrumRecord>> = BTreeMap::new();
        for r in &recs {
            by_key.entry(r.inchikey.clone()).or_default().push(r);
        }
        for group in by_key.values() {
            assert!(group.iter().all(|r| r.peaks == group[0].peaks));
        }
    }

    #[test]
    fn hand_built_disjoint_fragment_sets() {
        let mut rng = rng::substream(0, "t");
        let alphabet = fragment_alphabet(8, &mut rng);
        let a: BTreeSet<u64> = [0, 1, 2].iter().map(|&k: &usize| alphabet[k].mz.to_bits()).collect();
        let b: BTreeSet<u64> = [3, 4, 5].iter().map(|&k: &usize| alphabet[k].mz.to_bits()).collect();
        assert!(a.is_disjoint(&b));
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic_corpus(&SynthParams::default(), 11).unwrap();
        let b = generate_synthetic_corpus(&SynthParams::default(), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn smiles_pieces_unique() {
        let pieces: BTreeSet<String> = (0..200).map(fragment_smiles).collect();
        assert_eq!(pieces.len(), 200);
        assert_eq!(fragment_smiles(0), "N");
        assert_eq!(fragment_smiles(9), "NC");
        assert_eq!(fragment_smiles(9 * 4), "NCC");
    }

    #[test]
    fn rejects_bad_params() {
        let p = SynthParams {
            n_fragment_types: 4,
            ..SynthParams::default()
        };
        assert!(generate_synthetic_corpus(&p, 0).is_err());
    }
}
