use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;
use rand::seq::SliceRandom;

use super::report::MetricsReport;
use crate::corpus::{ScaffoldKey, SpectrumRecord};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::{substream, POOL_SAMPLING};

/// Distinct molecules (by full InChIKey) in a record set, sorted by key.
#[derive(Debug, Clone, PartialEq)]
pub struct MoleculeTable {
    pub ids: Vec<String>,
    pub smiles: Vec<String>,
    pub scaffolds: Vec<ScaffoldKey>,
    index: HashMap<String, usize>,
}

impl MoleculeTable {
    pub fn from_records(records: &[&SpectrumRecord]) -> Result<Self> {
        let mut by_key: BTreeMap<&str, &SpectrumRecord> = BTreeMap::new();
        for r in records {
            by_key.entry(r.inchikey.as_str()).or_insert(r);
        }
        let mut table = MoleculeTable {
            ids: Vec::with_capacity(by_key.len()),
            smiles: Vec::with_capacity(by_key.len()),
            scaffolds: Vec::with_capacity(by_key.len()),
            index: HashMap::with_capacity(by_key.len()),
        };
        for (i, (key, r)) in by_key.into_iter().enumerate() {
            table.ids.push(key.to_string());
            table.smiles.push(r.smiles.clone());
            table.scaffolds.push(r.scaffold()?);
            table.index.insert(key.to_string(), i);
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn position(&self, inchikey: &str) -> Option<usize> {
        self.index.get(inchikey).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalTask {
    pub query_record_id: String,
    pub candidate_molecule_ids: Vec<String>,
    pub truth_index: usize,
}

/// One task per record: the record's molecule plus `pool_size − 1`
/// distractors drawn without replacement from molecules of other scaffolds,
/// in shuffled order.
///
/// With `shared`, all spectra of one molecule reuse the pool drawn for its
/// first spectrum.
pub fn build_fixed_pool_tasks(
    records: &[&SpectrumRecord],
    pool_size: usize,
    seed: u64,
    shared: bool,
) -> Result<Vec<RetrievalTask>> {
    if pool_size == 0 {
        return Err(Error::InvalidArgument("pool size must be positive".into()));
    }
    let table = MoleculeTable::from_records(records)?;
    if table.len() < pool_size {
        return Err(Error::InsufficientPool {
            needed: pool_size,
            available: table.len(),
        });
    }
    let mut rng = substream(seed, POOL_SAMPLING);
    let mut cache: HashMap<usize, (Vec<String>, usize)> = HashMap::new();
    let mut tasks = Vec::with_capacity(records.len());
    for r in records {
        let truth = table.position(&r.inchikey).expect("table built from these records");
        if shared {
            if let Some((ids, t)) = cache.get(&truth) {
                tasks.push(RetrievalTask {
                    query_record_id: r.record_id.clone(),
                    candidate_molecule_ids: ids.clone(),
                    truth_index: *t,
                });
                continue;
            }
        }
        let scaffold = &table.scaffolds[truth];
        let others: Vec<usize> = (0..table.len()).filter(|&i| &table.scaffolds[i] != scaffold).collect();
        if others.len() < pool_size - 1 {
            return Err(Error::InsufficientPool {
                needed: pool_size,
                available: others.len() + 1,
            });
        }
        let mut pool: Vec<usize> = sample(&mut rng, others.len(), pool_size - 1)
            .into_iter()
            .map(|i| others[i])
            .collect();
        pool.push(truth);
        pool.shuffle(&mut rng);
        let truth_index = pool.iter().position(|&i| i == truth).expect("truth inserted");
        let ids: Vec<String> = pool.into_iter().map(|i| table.ids[i].clone()).collect();
        if shared {
            cache.insert(truth, (ids.clone(), truth_index));
        }
        tasks.push(RetrievalTask {
            query_record_id: r.record_id.clone(),
            candidate_molecule_ids: ids,
            truth_index,
        });
    }
    Ok(tasks)
}

/// Candidate indices by descending cosine similarity to `query`; exact ties
/// keep ascending index order.
pub fn rank_candidates(query: &Embedding, candidates: &[&Embedding]) -> Vec<usize> {
    let scores: Vec<f64> = candidates.iter().map(|c| query.dot(c)).collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Fraction of rankings whose truth sits in the first `k` places.
pub fn hit_at_k(rankings: &[Vec<usize>], truths: &[usize], k: usize) -> f64 {
    if rankings.is_empty() {
        return 0.0;
    }
    let hits = rankings
        .iter()
        .zip(truths)
        .filter(|(r, t)| r.iter().take(k).any(|c| c == *t))
        .count();
    hits as f64 / rankings.len() as f64
}

/// Precomputed embeddings for every spectrum and molecule of a record set.
#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    pub spectra: HashMap<String, Embedding>,
    pub molecules: HashMap<String, Embedding>,
    pub table: MoleculeTable,
}

impl EmbeddingIndex {
    pub fn build(model: &Model, records: &[&SpectrumRecord]) -> Result<Self> {
        let table = MoleculeTable::from_records(records)?;
        let spec = model.encode_spectra(records)?;
        let smiles: Vec<&str> = table.smiles.iter().map(String::as_str).collect();
        let mols = model.encode_molecules(&smiles)?;
        Ok(EmbeddingIndex {
            spectra: records.iter().map(|r| r.record_id.clone()).zip(spec).collect(),
            molecules: table.ids.iter().cloned().zip(mols).collect(),
            table,
        })
    }

    fn spectrum(&self, id: &str) -> Result<&Embedding> {
        self.spectra
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("no embedding for record {id}")))
    }

    fn molecule(&self, id: &str) -> Result<&Embedding> {
        self.molecules
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("no embedding for molecule {id}")))
    }

    pub fn rank(&self, task: &RetrievalTask) -> Result<Vec<usize>> {
        let q = self.spectrum(&task.query_record_id)?;
        let cands = task
            .candidate_molecule_ids
            .iter()
            .map(|id| self.molecule(id))
            .collect::<Result<Vec<_>>>()?;
        Ok(rank_candidates(q, &cands))
    }
}

pub const REPORTED_K: [usize; 3] = [1, 5, 10];

fn retrieval_report(
    protocol: &str,
    rankings: &[Vec<usize>],
    truths: &[usize],
    seed: u64,
    fingerprint: &str,
) -> MetricsReport {
    let values = rankings
        .iter()
        .zip(truths)
        .map(|(r, t)| if r[0] == *t { 1.0 } else { 0.0 })
        .collect();
    let mut report = MetricsReport::new(protocol, values, seed, fingerprint);
    for k in REPORTED_K {
        report.hit_at_k.insert(k, hit_at_k(rankings, truths, k));
    }
    report
}

/// Fixed-pool zero-shot retrieval over every record.
pub fn fixed_pool_retrieval(
    index: &EmbeddingIndex,
    records: &[&SpectrumRecord],
    pool_size: usize,
    shared: bool,
    seed: u64,
    fingerprint: &str,
) -> Result<MetricsReport> {
    let tasks = build_fixed_pool_tasks(records, pool_size, seed, shared)?;
    let rankings = tasks.iter().map(|t| index.rank(t)).collect::<Result<Vec<_>>>()?;
    let truths: Vec<usize> = tasks.iter().map(|t| t.truth_index).collect();
    Ok(retrieval_report(
        "retrieval_fixed",
        &rankings,
        &truths,
        seed,
        fingerprint,
    ))
}

/// Every record ranked against all distinct molecules of the record set.
pub fn global_retrieval(
    index: &EmbeddingIndex,
    records: &[&SpectrumRecord],
    seed: u64,
    fingerprint: &str,
) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument(
            "global retrieval needs a non-empty test split".into(),
        ));
    }
    let cands: Vec<&Embedding> = index
        .table
        .ids
        .iter()
        .map(|id| index.molecule(id))
        .collect::<Result<_>>()?;
    let mut rankings = Vec::with_capacity(records.len());
    let mut truths = Vec::with_capacity(records.len());
    for r in records {
        rankings.push(rank_candidates(index.spectrum(&r.record_id)?, &cands));
        truths.push(
            index
                .table
                .position(&r.inchikey)
                .ok_or_else(|| Error::InvalidArgument(format!("molecule of {} not indexed", r.record_id)))?,
        );
    }
    Ok(retrieval_report(
        "retrieval_global",
        &rankings,
        &truths,
        seed,
        fingerprint,
    ))
}
