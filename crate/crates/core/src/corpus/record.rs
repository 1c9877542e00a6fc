use std::fmt;

use crate::error::{Error, Result};

/// One centroided peak: mass-to-charge ratio (Th) and detector intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub mz: f64,
    pub intensity: f64,
}

impl Peak {
    pub fn new(mz: f64, intensity: f64) -> Result<Self> {
        if !(mz > 0.0 && mz.is_finite()) {
            return Err(Error::InvalidArgument(format!("m/z must be positive, got {mz}")));
        }
        if !(intensity >= 0.0 && intensity.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "intensity must be non-negative, got {intensity}"
            )));
        }
        Ok(Peak { mz, intensity })
    }
}

/// A measured spectrum with its molecular annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumRecord {
    pub record_id: String,
    pub peaks: Vec<Peak>,
    pub smiles: String,
    pub inchikey: String,
    pub instrument_tag: Option<String>,
}

impl SpectrumRecord {
    pub fn scaffold(&self) -> Result<ScaffoldKey> {
        scaffold_key(&self.inchikey)
    }
}

/// First InChIKey block: 14 uppercase letters identifying the skeleton.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScaffoldKey(String);

impl ScaffoldKey {
    pub fn new(key: &str) -> Result<Self> {
        if key.len() == 14 && key.bytes().all(|b| b.is_ascii_uppercase()) {
            Ok(ScaffoldKey(key.to_string()))
        } else {
            Err(Error::MalformedInchiKey(key.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ScaffoldKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// `true` iff `key` has the standard 14-10-1 hyphenated uppercase layout.
pub fn is_valid_inchikey(key: &str) -> bool {
    let parts: Vec<&str> = key.split('-').collect();
    parts.len() == 3
        && [14, 10, 1]
            .iter()
            .zip(&parts)
            .all(|(&n, p)| p.len() == n && p.bytes().all(|b| b.is_ascii_uppercase()))
}

pub fn scaffold_key(inchikey: &str) -> Result<ScaffoldKey> {
    if !is_valid_inchikey(inchikey) {
        return Err(Error::MalformedInchiKey(inchikey.to_string()));
    }
    ScaffoldKey::new(&inchikey[..14])
}
