//! Consensus clustering of one layer's artifacts.
//!
//! Five techniques cluster the embeddings independently. Every distinct member set they
//! produce becomes a candidate whose vote count is the number of techniques that produced
//! it. Candidates of size >= `large_cluster_min` are dropped, the rest are scored by
//! `(alpha * ln(s) + h) * v`, ranked, cleansed of outlying members and then admitted
//! greedily into a disjoint inclusion set. Whatever is left over is offered to the
//! admitted clusters once more and otherwise kept as a singleton.

mod affinity;
mod agglomerative;
mod kmeans;
mod optics;
mod spectral;

use std::collections::{BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::Embedding;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("cohesion needs at least 2 members, got {0}")]
    TooFewMembers(usize),
    #[error("{ids} ids but {embeddings} embeddings")]
    LengthMismatch { ids: usize, embeddings: usize },
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("invalid cluster parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Technique {
    Optics,
    Spectral,
    Agglomerative,
    Affinity,
    Kmeans,
}

impl Technique {
    pub const ALL: [Technique; 5] = [
        Technique::Optics,
        Technique::Spectral,
        Technique::Agglomerative,
        Technique::Affinity,
        Technique::Kmeans,
    ];

    fn salt(self) -> u64 {
        match self {
            Technique::Optics => 0x4f50,
            Technique::Spectral => 0x5350,
            Technique::Agglomerative => 0x4147,
            Technique::Affinity => 0x4146,
            Technique::Kmeans => 0x4b4d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub alpha: f64,
    pub large_cluster_min: usize,
    pub outlier_sigma: f64,
    pub selection_cohesion_percentile: f64,
    pub orphan_tolerance: f64,
    pub techniques: Vec<Technique>,
    /// Set from the run's seed, not configured separately.
    #[serde(skip)]
    pub seed: u64,
    /// Mean cluster size aimed for by the techniques that need a cluster count.
    pub target_cluster_size: f64,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub affinity_damping: f64,
    pub affinity_max_iter: usize,
    pub affinity_convergence_iter: usize,
    pub optics_min_samples: usize,
    pub optics_xi: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            large_cluster_min: 5,
            outlier_sigma: 1.5,
            selection_cohesion_percentile: 25.0,
            orphan_tolerance: 0.1,
            techniques: Technique::ALL.to_vec(),
            seed: 0,
            target_cluster_size: 3.0,
            kmeans_restarts: 4,
            kmeans_max_iter: 100,
            affinity_damping: 0.9,
            affinity_max_iter: 200,
            affinity_convergence_iter: 15,
            optics_min_samples: 2,
            optics_xi: 0.05,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<(), ClusterError> {
        let bad = |m: &str| Err(ClusterError::Params(m.to_string()));
        if self.techniques.is_empty() {
            return bad("at least one technique is required");
        }
        if !(self.alpha >= 0.0) {
            return bad("alpha must be >= 0");
        }
        if self.large_cluster_min < 3 {
            return bad("large_cluster_min must be >= 3");
        }
        if !(0.0..=100.0).contains(&self.selection_cohesion_percentile) {
            return bad("selection_cohesion_percentile must be within 0..=100");
        }
        if !(self.outlier_sigma >= 0.0) || !(self.orphan_tolerance >= 0.0) {
            return bad("outlier_sigma and orphan_tolerance must be >= 0");
        }
        if !(self.target_cluster_size >= 1.0) {
            return bad("target_cluster_size must be >= 1");
        }
        if !(0.5..1.0).contains(&self.affinity_damping) {
            return bad("affinity_damping must be within [0.5, 1)");
        }
        if self.optics_min_samples < 2 || !(self.optics_xi > 0.0 && self.optics_xi < 1.0) {
            return bad("optics_min_samples must be >= 2 and optics_xi within (0, 1)");
        }
        Ok(())
    }

    /// Cluster count for the techniques that need one.
    fn k_for(&self, space: &Space) -> usize {
        let n = space.len();
        let k = ((n as f64 / self.target_cluster_size).round() as usize).max(2);
        k.min(space.distinct_points()).max(1)
    }
}

/// Unit vectors plus their cosine matrix.
pub struct Space {
    pub(crate) unit: Vec<Vec<f64>>,
    pub(crate) sim: Vec<Vec<f64>>,
}

impl Space {
    pub fn new(embeddings: &[Embedding]) -> Result<Self, ClusterError> {
        if let Some(first) = embeddings.first() {
            if let Some(e) = embeddings.iter().find(|e| e.dim() != first.dim()) {
                return Err(ClusterError::DimensionMismatch(first.dim(), e.dim()));
            }
        }
        let unit: Vec<Vec<f64>> = embeddings
            .iter()
            .map(|e| {
                let n = e.norm();
                if n > 0.0 {
                    e.values().iter().map(|x| x / n).collect()
                } else {
                    e.values().to_vec()
                }
            })
            .collect();
        let n = unit.len();
        let mut sim = vec![vec![0.0; n]; n];
        for i in 0..n {
            sim[i][i] = 1.0;
            for j in i + 1..n {
                let mut s: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
                s = s.clamp(-1.0, 1.0);
                if 1.0 - s < 1e-12 {
                    s = 1.0;
                }
                sim[i][j] = s;
                sim[j][i] = s;
            }
        }
        Ok(Self { unit, sim })
    }

    pub fn len(&self) -> usize {
        self.unit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit.is_empty()
    }

    pub fn similarity(&self, i: usize, j: usize) -> f64 {
        self.sim[i][j]
    }

    pub(crate) fn distance(&self, i: usize, j: usize) -> f64 {
        if i == j { 0.0 } else { 1.0 - self.sim[i][j] }
    }

    /// Representative of every point after merging exact duplicates (cosine 1), as
    /// `(representatives, index into representatives per point)`.
    fn duplicates(&self) -> (Vec<usize>, Vec<usize>) {
        let mut reps: Vec<usize> = Vec::new();
        let mut of = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            match reps.iter().position(|&r| self.sim[r][i] >= 1.0) {
                Some(at) => of.push(at),
                None => {
                    of.push(reps.len());
                    reps.push(i);
                }
            }
        }
        (reps, of)
    }

    fn distinct_points(&self) -> usize {
        self.duplicates().0.len()
    }

    fn subset(&self, idx: &[usize]) -> Space {
        Space {
            unit: idx.iter().map(|&i| self.unit[i].clone()).collect(),
            sim: idx.iter().map(|&i| idx.iter().map(|&j| self.sim[i][j]).collect()).collect(),
        }
    }

    fn mean_to(&self, i: usize, members: &[usize]) -> f64 {
        let others: Vec<usize> = members.iter().copied().filter(|&m| m != i).collect();
        if others.is_empty() {
            return 0.0;
        }
        others.iter().map(|&m| self.sim[i][m]).sum::<f64>() / others.len() as f64
    }
}

/// Mean cosine over the unordered pairs of `members`.
pub fn cohesion(space: &Space, members: &[usize]) -> Result<f64, ClusterError> {
    let n = members.len();
    if n < 2 {
        return Err(ClusterError::TooFewMembers(n));
    }
    let mut total = 0.0;
    for (a, &i) in members.iter().enumerate() {
        for &j in &members[a + 1..] {
            total += space.sim[i][j];
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

/// [`cohesion`] over raw embeddings.
pub fn cohesion_of(embeddings: &[Embedding]) -> Result<f64, ClusterError> {
    let space = Space::new(embeddings)?;
    cohesion(&space, &(0..embeddings.len()).collect::<Vec<_>>())
}

pub fn importance(cohesion: f64, votes: usize, size: usize, alpha: f64) -> f64 {
    (alpha * (size.max(1) as f64).ln() + cohesion) * votes as f64
}

/// Sorted groups ordered by their first element; every index appears once.
pub type Partition = Vec<Vec<usize>>;

fn canonical(labels: &[Option<usize>]) -> Partition {
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut out: Partition = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        match l {
            Some(l) => groups.entry(*l).or_default().push(i),
            None => out.push(vec![i]),
        }
    }
    out.extend(groups.into_values());
    out.sort();
    out
}

pub fn run_technique(kind: Technique, space: &Space, params: &ClusterParams) -> Partition {
    let n = space.len();
    if n < 2 {
        return (0..n).map(|i| vec![i]).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ kind.salt());
    let labels: Vec<Option<usize>> = match kind {
        Technique::Kmeans => {
            kmeans::kmeans(&space.unit, params.k_for(space), params.kmeans_restarts, params.kmeans_max_iter, &mut rng)
                .into_iter()
                .map(Some)
                .collect()
        }
        Technique::Spectral => spectral::spectral(space, params.k_for(space), params, &mut rng)
            .into_iter()
            .map(Some)
            .collect(),
        Technique::Agglomerative => agglomerative::average_linkage(space, params.k_for(space))
            .into_iter()
            .map(Some)
            .collect(),
        Technique::Affinity => {
            // message passing cannot break the symmetry between exact duplicates
            let (reps, of) = space.duplicates();
            let labels = affinity::affinity_propagation(&space.subset(&reps), params, &mut rng);
            of.iter().map(|&r| labels[r]).collect()
        }
        Technique::Optics => optics::optics_xi(space, params.optics_min_samples, params.optics_xi),
    };
    canonical(&labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub members: Vec<usize>,
    pub votes: usize,
    pub origin: BTreeSet<Technique>,
}

/// Union of all technique partitions; votes count how many techniques produced each
/// exact member set. Order is first appearance in technique order.
pub fn generate_candidates(space: &Space, params: &ClusterParams) -> Vec<Candidate> {
    let partitions: Vec<(Technique, Partition)> = params
        .techniques
        .par_iter()
        .map(|&t| (t, run_technique(t, space, params)))
        .collect();
    merge_partitions(&partitions)
}

pub fn merge_partitions(partitions: &[(Technique, Partition)]) -> Vec<Candidate> {
    let mut pool: Vec<Candidate> = Vec::new();
    let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
    for (technique, partition) in partitions {
        for group in partition {
            match index.get(group) {
                Some(&at) => {
                    if pool[at].origin.insert(*technique) {
                        pool[at].votes += 1;
                    }
                }
                None => {
                    index.insert(group.clone(), pool.len());
                    pool.push(Candidate {
                        members: group.clone(),
                        votes: 1,
                        origin: BTreeSet::from([*technique]),
                    });
                }
            }
        }
    }
    pool
}

/// Drops candidates of size >= `large_cluster_min` and sets singletons aside.
pub fn filter_by_size(pool: Vec<Candidate>, params: &ClusterParams) -> (Vec<Candidate>, Vec<usize>) {
    let mut kept = Vec::new();
    let mut aside = BTreeSet::new();
    for c in pool {
        match c.members.len() {
            1 => {
                aside.insert(c.members[0]);
            }
            s if s >= params.large_cluster_min => {}
            _ => kept.push(c),
        }
    }
    (kept, aside.into_iter().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cluster {
    #[serde(skip)]
    pub members: Vec<usize>,
    pub member_ids: Vec<String>,
    pub cohesion: f64,
    pub votes: usize,
    pub size: usize,
    pub importance: f64,
    pub origin: BTreeSet<Technique>,
}

impl Cluster {
    fn build(
        members: Vec<usize>,
        votes: usize,
        origin: BTreeSet<Technique>,
        space: &Space,
        ids: &[String],
        alpha: f64,
    ) -> Self {
        let mut c = Cluster {
            member_ids: Vec::new(),
            members,
            cohesion: 0.0,
            votes,
            size: 0,
            importance: 0.0,
            origin,
        };
        c.refresh(space, ids, alpha);
        c
    }

    /// Recomputes everything derived from membership. Fewer than 2 members keeps the
    /// previous cohesion.
    fn refresh(&mut self, space: &Space, ids: &[String], alpha: f64) {
        self.members.sort_unstable();
        self.members.dedup();
        self.member_ids = self.members.iter().map(|&m| ids[m].clone()).collect();
        self.size = self.members.len();
        if let Ok(h) = cohesion(space, &self.members) {
            self.cohesion = h;
        }
        self.importance = importance(self.cohesion, self.votes, self.size, alpha);
    }

    fn first_id(&self) -> &str {
        self.member_ids.iter().min().map_or("", |s| s.as_str())
    }
}

pub fn score(pool: Vec<Candidate>, space: &Space, ids: &[String], params: &ClusterParams) -> Vec<Cluster> {
    pool.into_iter()
        .map(|c| Cluster::build(c.members, c.votes, c.origin, space, ids, params.alpha))
        .collect()
}

/// Descending importance; ties by higher cohesion, then smaller first member id.
pub fn rank_clusters(mut pool: Vec<Cluster>) -> Vec<Cluster> {
    pool.sort_by(|a, b| {
        b.importance
            .total_cmp(&a.importance)
            .then(b.cohesion.total_cmp(&a.cohesion))
            .then_with(|| a.first_id().cmp(b.first_id()))
    });
    pool
}

/// Ejects members whose mean similarity to the rest falls below
/// `mean - outlier_sigma * std` of all members' means (population std).
pub fn cleanse(
    mut cluster: Cluster,
    space: &Space,
    ids: &[String],
    params: &ClusterParams,
) -> (Cluster, Vec<usize>) {
    if cluster.members.len() < 3 {
        return (cluster, Vec::new());
    }
    let means: Vec<f64> = cluster.members.iter().map(|&i| space.mean_to(i, &cluster.members)).collect();
    let mu = means.iter().sum::<f64>() / means.len() as f64;
    let sd = (means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / means.len() as f64).sqrt();
    let cutoff = mu - params.outlier_sigma * sd;
    let ejected: Vec<usize> = cluster
        .members
        .iter()
        .zip(&means)
        .filter(|(_, &m)| m < cutoff)
        .map(|(&i, _)| i)
        .collect();
    if !ejected.is_empty() {
        cluster.members.retain(|i| !ejected.contains(i));
        cluster.refresh(space, ids, params.alpha);
    }
    (cluster, ejected)
}

/// Linear-interpolated percentile (`p` in 0..=100) of unsorted values.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = p.clamp(0.0, 100.0) / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (rank - lo as f64))
}

/// Greedy admission in ranked order into a disjoint inclusion set.
pub fn select_clusters(
    ranked: Vec<Cluster>,
    space: &Space,
    ids: &[String],
    params: &ClusterParams,
) -> Vec<Cluster> {
    let cohesions: Vec<f64> = ranked.iter().filter(|c| c.size >= 2).map(|c| c.cohesion).collect();
    let Some(threshold) = percentile(&cohesions, params.selection_cohesion_percentile) else {
        return Vec::new();
    };
    let mut present = BTreeSet::new();
    let mut admitted = Vec::new();
    for mut focus in ranked {
        let before = focus.members.len();
        focus.members.retain(|m| !present.contains(m));
        if focus.members.len() < 2 {
            continue;
        }
        if focus.members.len() != before {
            focus.refresh(space, ids, params.alpha);
        }
        if focus.cohesion >= threshold {
            present.extend(focus.members.iter().copied());
            admitted.push(focus);
        }
    }
    admitted
}

/// Offers each orphan (in index order) to the admitted clusters. It joins the qualifying
/// cluster with the highest mean similarity, where qualifying means the mean is within
/// `orphan_tolerance` of the cluster's cohesion or above it.
pub fn assign_orphans(
    mut clusters: Vec<Cluster>,
    orphans: &[usize],
    space: &Space,
    ids: &[String],
    params: &ClusterParams,
) -> (Vec<Cluster>, Vec<usize>) {
    let mut singletons = Vec::new();
    for &o in orphans {
        let mut best: Option<(usize, f64)> = None;
        for (ci, c) in clusters.iter().enumerate() {
            let mean = c.members.iter().map(|&m| space.sim[o][m]).sum::<f64>() / c.members.len() as f64;
            let qualifies = (mean - c.cohesion).abs() <= params.orphan_tolerance + 1e-12 || mean > c.cohesion;
            if qualifies && best.is_none_or(|(_, b)| mean > b) {
                best = Some((ci, mean));
            }
        }
        match best {
            Some((ci, _)) => {
                clusters[ci].members.push(o);
                clusters[ci].refresh(space, ids, params.alpha);
            }
            None => singletons.push(o),
        }
    }
    (clusters, singletons)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clustering {
    pub layer_index: usize,
    pub clusters: Vec<Cluster>,
    pub singletons: Vec<String>,
    #[serde(skip)]
    pub singleton_indices: Vec<usize>,
}

impl Clustering {
    fn all_singletons(layer_index: usize, ids: &[String]) -> Self {
        Self {
            layer_index,
            clusters: Vec::new(),
            singletons: ids.to_vec(),
            singleton_indices: (0..ids.len()).collect(),
        }
    }
}

/// Inspection dump of one clustering run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ClusterReport {
    pub layer_index: usize,
    pub candidates: Vec<Cluster>,
    pub discarded_large: Vec<Vec<String>>,
    pub set_aside: Vec<String>,
    pub ejected: Vec<String>,
    /// Final clusters that orphan joins pushed to `large_cluster_min` or beyond.
    pub oversized: Vec<Vec<String>>,
}

/// Full consensus clustering of one layer.
pub fn cluster_layer(
    layer_index: usize,
    ids: &[String],
    embeddings: &[Embedding],
    params: &ClusterParams,
) -> Result<(Clustering, ClusterReport), ClusterError> {
    params.validate()?;
    if ids.len() != embeddings.len() {
        return Err(ClusterError::LengthMismatch { ids: ids.len(), embeddings: embeddings.len() });
    }
    let mut report = ClusterReport { layer_index, ..Default::default() };
    if ids.len() < 2 {
        return Ok((Clustering::all_singletons(layer_index, ids), report));
    }
    let space = Space::new(embeddings)?;
    let pool = generate_candidates(&space, params);
    report.discarded_large = pool
        .iter()
        .filter(|c| c.members.len() >= params.large_cluster_min)
        .map(|c| c.members.iter().map(|&m| ids[m].clone()).collect())
        .collect();
    let (kept, aside) = filter_by_size(pool, params);
    report.set_aside = aside.iter().map(|&i| ids[i].clone()).collect();

    let ranked = rank_clusters(score(kept, &space, ids, params));
    report.candidates = ranked.clone();
    let mut cleansed = Vec::with_capacity(ranked.len());
    for c in ranked {
        let (c, out) = cleanse(c, &space, ids, params);
        report.ejected.extend(out.iter().map(|&i| ids[i].clone()));
        cleansed.push(c);
    }
    report.ejected.sort();
    report.ejected.dedup();

    let admitted = select_clusters(cleansed, &space, ids, params);
    let covered: BTreeSet<usize> = admitted.iter().flat_map(|c| c.members.iter().copied()).collect();
    let orphans: Vec<usize> = (0..ids.len()).filter(|i| !covered.contains(i)).collect();
    let (clusters, singleton_indices) = assign_orphans(admitted, &orphans, &space, ids, params);
    report.oversized = clusters
        .iter()
        .filter(|c| c.size >= params.large_cluster_min)
        .map(|c| c.member_ids.clone())
        .collect();
    let clustering = Clustering {
        layer_index,
        clusters,
        singletons: singleton_indices.iter().map(|&i| ids[i].clone()).collect(),
        singleton_indices,
    };
    Ok((clustering, report))
}
