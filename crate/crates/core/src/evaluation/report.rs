use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::stats::{mean, population_std, standard_error};
use crate::error::{Error, Result};

/// Per-unit values of one protocol run plus their summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub protocol: String,
    /// One value per task or episode, in sampling order.
    pub values: Vec<f64>,
    /// `k → Hit@k`; empty for episodic protocols.
    pub hit_at_k: BTreeMap<usize, f64>,
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
    pub count: usize,
    pub seed: u64,
    pub fingerprint: String,
}

impl MetricsReport {
    pub fn new(protocol: impl Into<String>, values: Vec<f64>, seed: u64, fingerprint: impl Into<String>) -> Self {
        MetricsReport {
            protocol: protocol.into(),
            mean: mean(&values),
            std: population_std(&values),
            stderr: standard_error(&values),
            count: values.len(),
            values,
            hit_at_k: BTreeMap::new(),
            seed,
            fingerprint: fingerprint.into(),
        }
    }

    /// `unit_index<TAB>value` lines.
    pub fn units_text(&self) -> String {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{i}\t{v}\n"))
            .collect()
    }

    /// Key-sorted `key = value` lines.
    pub fn summary_text(&self) -> String {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        kv.insert("count".into(), self.count.to_string());
        kv.insert("fingerprint".into(), self.fingerprint.clone());
        kv.insert("mean".into(), self.mean.to_string());
        kv.insert("protocol".into(), self.protocol.clone());
        kv.insert("seed".into(), self.seed.to_string());
        kv.insert("std".into(), self.std.to_string());
        kv.insert("stderr".into(), self.stderr.to_string());
        for (k, v) in &self.hit_at_k {
            kv.insert(format!("hit_at_{k}"), v.to_string());
        }
        kv.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Writes `<protocol>.tsv` and `<protocol>.summary` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let units = dir.join(format!("{}.tsv", self.protocol));
        let summary = dir.join(format!("{}.summary", self.protocol));
        std::fs::write(&units, self.units_text()).map_err(|e| Error::io(&units, e))?;
        std::fs::write(&summary, self.summary_text()).map_err(|e| Error::io(&summary, e))?;
        Ok(vec![units, summary])
    }
}

/// `method<TAB>mean<TAB>std` rows for error-bar plots.
pub fn error_bar_rows(reports: &[&MetricsReport]) -> String {
    reports
        .iter()
        .map(|r| format!("{}\t{}\t{}\n", r.protocol, r.mean, r.std))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stored_units_regenerate_the_summary() {
        let r = MetricsReport::new("fewshot", vec![0.2, 0.4, 1.0, 0.6], 3, "abc");
        let parsed: Vec<f64> = r
            .units_text()
            .lines()
            .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
            .collect();
        assert!((mean(&parsed) - r.mean).abs() < 1e-12);
        assert!((population_std(&parsed) - r.std).abs() < 1e-12);
        assert!(r.summary_text().starts_with("count = 4\nfingerprint = abc\nmean = "));
    }

    #[test]
    fn writes_both_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = MetricsReport::new("retrieval_fixed", vec![1.0, 0.0], 0, "f");
        r.hit_at_k.insert(1, 0.5);
        let files = r.write(dir.path()).unwrap();
        assert_eq!(std::fs::read_to_string(&files[0]).unwrap(), "0\t1\n1\t0\n");
        assert!(std::fs::read_to_string(&files[1]).unwrap().contains("hit_at_1 = 0.5\n"));
        assert_eq!(error_bar_rows(&[&r]), "retrieval_fixed\t0.5\t0.5\n");
    }
}
