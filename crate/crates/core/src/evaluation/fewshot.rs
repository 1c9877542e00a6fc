use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;

use super::report::MetricsReport;
use crate::corpus::{ScaffoldKey, SpectrumRecord};
use crate::embedding::{l2_normalize, Embedding};
use crate::error::{Error, Result};
use crate::rng::{substream, EPISODE_SAMPLING};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeSpec {
    pub way: usize,
    pub shot: usize,
    pub queries: usize,
    pub classes: Vec<ScaffoldKey>,
    /// `support[c]` holds the `shot` record ids of class `c`.
    pub support: Vec<Vec<String>>,
    /// `query[c]` holds the `queries` record ids of class `c`.
    pub query: Vec<Vec<String>>,
}

/// Draws `n_episodes` N-way K-shot episodes whose classes are scaffolds.
pub fn sample_episodes(
    records: &[&SpectrumRecord],
    way: usize,
    shot: usize,
    queries: usize,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeSpec>> {
    if way == 0 || shot == 0 || queries == 0 {
        return Err(Error::InvalidArgument("way, shot and queries must be positive".into()));
    }
    let mut groups: BTreeMap<ScaffoldKey, Vec<&str>> = BTreeMap::new();
    for r in records {
        groups.entry(r.scaffold()?).or_default().push(&r.record_id);
    }
    let per_class = shot + queries;
    let qualifying: Vec<(&ScaffoldKey, &Vec<&str>)> = groups.iter().filter(|(_, ids)| ids.len() >= per_class).collect();
    if qualifying.len() < way {
        return Err(Error::InsufficientClasses {
            needed: way,
            per_class,
            available: qualifying.len(),
        });
    }
    let mut rng = substream(seed, EPISODE_SAMPLING);
    let mut episodes = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let picked = sample(&mut rng, qualifying.len(), way);
        let mut ep = EpisodeSpec {
            way,
            shot,
            queries,
            classes: Vec::with_capacity(way),
            support: Vec::with_capacity(way),
            query: Vec::with_capacity(way),
        };
        for c in picked {
            let (key, ids) = qualifying[c];
            let members = sample(&mut rng, ids.len(), per_class).into_vec();
            ep.classes.push(key.clone());
            ep.support
                .push(members[..shot].iter().map(|&i| ids[i].to_string()).collect());
            ep.query
                .push(members[shot..].iter().map(|&i| ids[i].to_string()).collect());
        }
        episodes.push(ep);
    }
    Ok(episodes)
}

/// Nearest-prototype accuracy. A prototype is the ℓ2-normalized mean of its
/// class's support embeddings; ties go to the lower class index.
pub fn run_episode(episode: &EpisodeSpec, embeddings: &HashMap<String, Embedding>) -> Result<f64> {
    let get = |id: &str| {
        embeddings
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("no embedding for record {id}")))
    };
    let mut prototypes = Vec::with_capacity(episode.support.len());
    for ids in &episode.support {
        let first = get(&ids[0])?;
        let mut sum = vec![0.0; first.dim()];
        for id in ids {
            for (s, v) in sum.iter_mut().zip(&get(id)?.values) {
                *s += v;
            }
        }
        let k = ids.len() as f64;
        prototypes.push(l2_normalize(sum.into_iter().map(|v| v / k).collect()));
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (class, ids) in episode.query.iter().enumerate() {
        for id in ids {
            let q = get(id)?;
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (c, p) in prototypes.iter().enumerate() {
                let s = q.dot(p);
                if s > best_score {
                    best = c;
                    best_score = s;
                }
            }
            correct += usize::from(best == class);
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

pub fn fewshot_protocol_name(way: usize, shot: usize) -> String {
    format!("fewshot_{way}way_{shot}shot")
}

#[allow(clippy::too_many_arguments)]
pub fn fewshot(
    embeddings: &HashMap<String, Embedding>,
    records: &[&SpectrumRecord],
    way: usize,
    shot: usize,
    queries: usize,
    n_episodes: usize,
    seed: u64,
    fingerprint: &str,
) -> Result<MetricsReport> {
    let episodes = sample_episodes(records, way, shot, queries, n_episodes, seed)?;
    let values = episodes
        .iter()
        .map(|e| run_episode(e, embeddings))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::new(
        fewshot_protocol_name(way, shot),
        values,
        seed,
        fingerprint,
    ))
}
