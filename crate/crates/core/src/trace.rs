//! Trace links between a generated layer and the layer below.
//!
//! Within each source cluster, parent × child cosines are rescaled and every pair within
//! `sigma_window` standard deviations of the top score is linked. Children left without a
//! parent are attached to their most similar parent anywhere in the new layer. Afterwards
//! near-duplicate parents share compatible children, and a parent whose child set ends up
//! identical to its duplicate partner's is removed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::TraceLink;
use crate::provider::{cosine_similarity, Embedding, ProviderError};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot link {0}: the new layer has no artifacts")]
    EmptyLayer(String),
    #[error("cluster has no generated parents")]
    NoParents,
    #[error(transparent)]
    Similarity(#[from] ProviderError),
    #[error("invalid link parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `(s - min) / (max - min)`.
    MinMax,
    /// `s / max`.
    RawMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkParams {
    pub sigma_window: f64,
    /// Typical cutoff; only reported in diagnostics.
    pub floor_hint: f64,
    pub duplicate_sigma: f64,
    pub share_tolerance: f64,
    pub normalization: Normalization,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            sigma_window: 2.0,
            floor_hint: 0.8,
            duplicate_sigma: 2.0,
            share_tolerance: 0.1,
            normalization: Normalization::MinMax,
        }
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<(), TraceError> {
        let all = [self.sigma_window, self.floor_hint, self.duplicate_sigma, self.share_tolerance];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(TraceError::Params("sigma_window, floor_hint, duplicate_sigma and share_tolerance must be positive".into()))
        }
    }
}

/// Dense parent × child cosine scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub parent_ids: Vec<String>,
    pub child_ids: Vec<String>,
    pub scores: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn compute(
        parent_ids: Vec<String>,
        parents: &[Embedding],
        child_ids: Vec<String>,
        children: &[Embedding],
    ) -> Result<Self, TraceError> {
        let scores = parents
            .iter()
            .map(|p| children.iter().map(|c| cosine_similarity(p, c)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { parent_ids, child_ids, scores })
    }

    pub fn from_scores(parent_ids: Vec<String>, child_ids: Vec<String>, scores: Vec<Vec<f64>>) -> Self {
        Self { parent_ids, child_ids, scores }
    }

    pub fn score(&self, parent: usize, child: usize) -> f64 {
        self.scores[parent][child]
    }

    fn link(&self, parent: usize, child: usize) -> TraceLink {
        TraceLink {
            parent_id: self.parent_ids[parent].clone(),
            child_id: self.child_ids[child].clone(),
            score: self.scores[parent][child].clamp(0.0, 1.0),
        }
    }

    fn parent_index(&self) -> BTreeMap<&str, usize> {
        self.parent_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    fn child_index(&self) -> BTreeMap<&str, usize> {
        self.child_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    /// `parent,child,score` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("parent,child,score\n");
        for (p, row) in self.parent_ids.iter().zip(&self.scores) {
            for (c, s) in self.child_ids.iter().zip(row) {
                out.push_str(&format!("{p},{c},{s:.6}\n"));
            }
        }
        out
    }
}

/// Rescales scores so the top one is 1. Constant inputs all map to 1.
pub fn normalize(scores: &[f64], how: Normalization) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    match how {
        _ if max - min <= 1e-12 => vec![1.0; scores.len()],
        Normalization::MinMax => scores.iter().map(|s| (s - min) / (max - min)).collect(),
        Normalization::RawMax if max > 0.0 => scores.iter().map(|s| s / max).collect(),
        Normalization::RawMax => scores.iter().map(|s| (s - min) / (max - min)).collect(),
    }
}

pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Links within one cluster. `parents` and `children` index into `sim`.
pub fn link_intra_cluster(
    parents: &[usize],
    children: &[usize],
    sim: &SimilarityMatrix,
    params: &LinkParams,
) -> Result<Vec<TraceLink>, TraceError> {
    if parents.is_empty() {
        return Err(TraceError::NoParents);
    }
    let pairs: Vec<(usize, usize)> =
        parents.iter().flat_map(|&p| children.iter().map(move |&c| (p, c))).collect();
    if pairs.len() == 1 {
        return Ok(vec![sim.link(pairs[0].0, pairs[0].1)]);
    }
    let raw: Vec<f64> = pairs.iter().map(|&(p, c)| sim.score(p, c)).collect();
    let norm = normalize(&raw, params.normalization);
    let cutoff = 1.0 - params.sigma_window * population_std(&norm);
    Ok(pairs
        .iter()
        .zip(&norm)
        .filter(|(_, &n)| n >= cutoff - 1e-12)
        .map(|(&(p, c), _)| sim.link(p, c))
        .collect())
}

/// Gives every child without a link one to its most similar parent in the whole layer.
pub fn ensure_no_orphans(
    mut links: Vec<TraceLink>,
    sim: &SimilarityMatrix,
) -> Result<Vec<TraceLink>, TraceError> {
    if sim.parent_ids.is_empty() {
        if sim.child_ids.is_empty() {
            return Ok(links);
        }
        return Err(TraceError::EmptyLayer(sim.child_ids[0].clone()));
    }
    let linked: BTreeSet<&str> = links.iter().map(|l| l.child_id.as_str()).collect();
    let orphans: Vec<usize> =
        (0..sim.child_ids.len()).filter(|&c| !linked.contains(sim.child_ids[c].as_str())).collect();
    for c in orphans {
        let best = (0..sim.parent_ids.len())
            .fold(0, |b, p| if sim.score(p, c) > sim.score(b, c) { p } else { b });
        links.push(sim.link(best, c));
    }
    Ok(links)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DuplicateFlag {
    pub a: String,
    pub b: String,
    pub score: f64,
}

/// Pairs of parents whose similarity exceeds the mean of all pairs by more than
/// `duplicate_sigma` standard deviations. Needs at least 3 artifacts.
pub fn detect_cross_duplicates(
    ids: &[String],
    pairwise: &[Vec<f64>],
    params: &LinkParams,
) -> Vec<DuplicateFlag> {
    let n = ids.len();
    if n < 3 {
        return Vec::new();
    }
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            pairs.push((i, j, pairwise[i][j]));
        }
    }
    let scores: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let cut = mean + params.duplicate_sigma * population_std(&scores);
    let mut flags: Vec<DuplicateFlag> = pairs
        .into_iter()
        .filter(|p| p.2 > cut)
        .map(|(i, j, s)| {
            let (a, b) = if ids[i] <= ids[j] { (i, j) } else { (j, i) };
            DuplicateFlag { a: ids[a].clone(), b: ids[b].clone(), score: s }
        })
        .collect();
    flags.sort_by(|x, y| y.score.total_cmp(&x.score).then_with(|| (&x.a, &x.b).cmp(&(&y.a, &y.b))));
    flags
}

fn children_of(links: &[TraceLink]) -> BTreeMap<String, BTreeSet<String>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for l in links {
        out.entry(l.parent_id.clone()).or_default().insert(l.child_id.clone());
    }
    out
}

/// For each flagged pair, copies a child of one partner to the other when both score it
/// within `share_tolerance`. Repeats until nothing changes, so a second call adds nothing.
pub fn share_links(
    flags: &[DuplicateFlag],
    mut links: Vec<TraceLink>,
    sim: &SimilarityMatrix,
    params: &LinkParams,
) -> Vec<TraceLink> {
    let pidx = sim.parent_index();
    let cidx = sim.child_index();
    loop {
        let snapshot = children_of(&links);
        let mut added: BTreeSet<(String, String)> = BTreeSet::new();
        for f in flags {
            let (Some(&a), Some(&b)) = (pidx.get(f.a.as_str()), pidx.get(f.b.as_str())) else {
                continue;
            };
            for (from, to) in [(b, a), (a, b)] {
                let Some(kids) = snapshot.get(&sim.parent_ids[from]) else { continue };
                let have = snapshot.get(&sim.parent_ids[to]);
                for kid in kids {
                    if have.is_some_and(|h| h.contains(kid)) {
                        continue;
                    }
                    let Some(&c) = cidx.get(kid.as_str()) else { continue };
                    if (sim.score(to, c) - sim.score(from, c)).abs() <= params.share_tolerance + 1e-12 {
                        added.insert((sim.parent_ids[to].clone(), kid.clone()));
                    }
                }
            }
        }
        if added.is_empty() {
            return links;
        }
        for (p, c) in added {
            links.push(sim.link(pidx[p.as_str()], cidx[c.as_str()]));
        }
    }
}

/// Removes one partner of every flagged pair whose child sets are identical. The survivor
/// has the higher mean child similarity (smaller id on ties). Returns the removed ids and
/// the remaining links.
pub fn merge_duplicates(
    flags: &[DuplicateFlag],
    links: Vec<TraceLink>,
    sim: &SimilarityMatrix,
) -> (Vec<String>, Vec<TraceLink>) {
    let pidx = sim.parent_index();
    let cidx = sim.child_index();
    let kids = children_of(&links);
    let empty = BTreeSet::new();
    let mean_sim = |p: &str| {
        let set = kids.get(p).unwrap_or(&empty);
        let Some(&pi) = pidx.get(p) else { return 0.0 };
        let scores: Vec<f64> = set.iter().filter_map(|c| cidx.get(c.as_str())).map(|&c| sim.score(pi, c)).collect();
        if scores.is_empty() { 0.0 } else { scores.iter().sum::<f64>() / scores.len() as f64 }
    };
    let mut removed: BTreeSet<String> = BTreeSet::new();
    for f in flags {
        if removed.contains(&f.a) || removed.contains(&f.b) {
            continue;
        }
        if kids.get(&f.a).unwrap_or(&empty) != kids.get(&f.b).unwrap_or(&empty) {
            continue;
        }
        let (ma, mb) = (mean_sim(&f.a), mean_sim(&f.b));
        let drop = if ma > mb || (ma == mb && f.a < f.b) { &f.b } else { &f.a };
        removed.insert(drop.clone());
    }
    let kept = links.into_iter().filter(|l| !removed.contains(&l.parent_id)).collect();
    (removed.into_iter().collect(), kept)
}
