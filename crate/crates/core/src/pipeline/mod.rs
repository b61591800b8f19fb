//! End-to-end runs: code summaries, then one clustered generation pass per configured
//! layer, assembled into a validated [`ArtifactTree`]. Also the flat baseline generator.

mod config;
mod export;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;
use tracing::info;

pub use config::{PipelineConfig, SourceConfig};
pub use export::{export, ExportFormat};

use crate::cluster::{cluster_layer, cohesion_of, ClusterParams, ClusterReport};
use crate::generate::{
    concept_diversity, find_duplicate_clusters, information_density, max_inverse_cohesion,
    n_targets, trace_duplicate_sources, GenerateError, GenerationRecord, Generator, LayerSpec,
};
use crate::model::{validate_tree, Artifact, ArtifactTree, Layer, TraceLink};
use crate::prompts::{PromptError, PromptSet};
use crate::provider::{Embedding, Gateway, ProviderError, ResponseCache};
use crate::summarizer::{discover_sources, estimate_tokens, SummarizeError, Summarizer, CODE_ARTIFACT_TYPE};
use crate::trace::{
    detect_cross_duplicates, ensure_no_orphans, link_intra_cluster, merge_duplicates, share_links,
    DuplicateFlag, SimilarityMatrix,
};

/// Similarity window used when tracing duplicated artifacts back to their sources.
const DUPLICATE_SOURCE_TOLERANCE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("no inputs: no source files matched under {0}")]
    NoInputs(String),
    #[error("{stage}: {source}")]
    Provider {
        stage: String,
        #[source]
        source: ProviderError,
    },
    #[error("{stage}: {message}")]
    Stage { stage: String, message: String },
    #[error("assembled tree is invalid: {0}")]
    InvalidTree(String),
}

impl PipelineError {
    fn stage(stage: impl Into<String>, message: impl ToString) -> Self {
        PipelineError::Stage { stage: stage.into(), message: message.to_string() }
    }

    fn provider(stage: impl Into<String>, source: ProviderError) -> Self {
        match source {
            ProviderError::Config(m) => PipelineError::Config(m),
            source => PipelineError::Provider { stage: stage.into(), source },
        }
    }

    fn generation(stage: String, e: GenerateError) -> Self {
        match e {
            GenerateError::Provider(p) => Self::provider(stage, p),
            other => Self::stage(stage, other),
        }
    }
}

impl From<PromptError> for PipelineError {
    fn from(e: PromptError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

/// Providers, prompts and settings for one run.
pub struct Engine {
    pub config: PipelineConfig,
    pub gateway: Gateway,
    pub prompts: PromptSet,
}

impl Engine {
    /// Builds providers (failing fast on missing credentials), cache and prompts.
    pub fn from_config(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let mut gateway = Gateway::from_configs(&config.completion, &config.embedding)
            .map_err(|e| PipelineError::provider("providers", e))?;
        if let Some(dir) = &config.cache_dir {
            let cache = ResponseCache::open(dir).map_err(|e| PipelineError::provider("cache", e))?;
            gateway = gateway.with_cache(cache);
        }
        let prompts = match &config.prompt_dir {
            Some(dir) => PromptSet::with_overrides(dir)?,
            None => PromptSet::builtin(),
        };
        Ok(Self { config, gateway, prompts })
    }

    pub fn new(config: PipelineConfig, gateway: Gateway, prompts: PromptSet) -> Self {
        Self { config, gateway, prompts }
    }

    fn cluster_params(&self) -> ClusterParams {
        ClusterParams { seed: self.config.seed, ..self.config.cluster.clone() }
    }

    fn embed(&self, stage: &str, artifacts: &[&Artifact]) -> Result<Vec<Embedding>, PipelineError> {
        if artifacts.is_empty() {
            return Ok(Vec::new());
        }
        let texts: Vec<String> = artifacts.iter().map(|a| a.embedding_text()).collect();
        self.gateway.embed(&texts).map_err(|e| PipelineError::provider(stage, e))
    }

    /// Layer 0: one summary per discovered source file.
    pub fn summarize(&self) -> Result<Layer, PipelineError> {
        let started = Instant::now();
        let root = self
            .config
            .source
            .root
            .clone()
            .ok_or_else(|| PipelineError::Config("no source root given".into()))?;
        let files = discover_sources(&root, &self.config.source.include, &self.config.source.exclude)
            .map_err(|e| match e {
                SummarizeError::Glob { .. } => PipelineError::Config(e.to_string()),
                other => PipelineError::stage("discover", other),
            })?;
        let files: Vec<_> = files.into_iter().filter(|f| !f.content.trim().is_empty()).collect();
        if files.is_empty() {
            return Err(PipelineError::NoInputs(root.display().to_string()));
        }
        let mut summarizer = Summarizer::new(&self.gateway, &self.prompts);
        summarizer.chunk_budget = self.config.chunk_tokens;
        let mut layer = Layer::new(0, CODE_ARTIFACT_TYPE);
        for result in summarizer.summarize_all(&files) {
            match result {
                Ok(a) => layer.push_unique(a),
                Err(SummarizeError::Provider { path, source }) => {
                    return Err(PipelineError::provider(format!("summarize {path}"), source))
                }
                Err(e) => return Err(PipelineError::stage("summarize", e)),
            }
        }
        info!(files = layer.len(), elapsed_ms = started.elapsed().as_millis() as u64, "summarized sources");
        Ok(layer)
    }

    /// Clusters `lower`, generates the next layer and links it back.
    pub fn run_layer(&self, lower: &Layer, spec: &LayerSpec) -> Result<LayerOutcome, PipelineError> {
        let started = Instant::now();
        let index = lower.index + 1;
        let tag = |s: &str| format!("layer {index} {s}");
        if lower.is_empty() {
            return Err(PipelineError::stage(tag("cluster"), "no inputs"));
        }
        let params = self.cluster_params();
        let children: Vec<&Artifact> = lower.artifacts.iter().collect();
        let child_ids: Vec<String> = children.iter().map(|a| a.id.clone()).collect();
        let child_emb = self.embed(&tag("embed"), &children)?;

        // Stage 1
        let (clustering, cluster_report) = cluster_layer(lower.index, &child_ids, &child_emb, &params)
            .map_err(|e| PipelineError::stage(tag("cluster"), e))?;
        let mut units: Vec<Unit> = clustering
            .clusters
            .iter()
            .enumerate()
            .map(|(k, c)| Unit { label: format!("c{k}"), members: c.members.clone(), cohesion: Some(c.cohesion) })
            .collect();
        units.extend(
            clustering
                .singleton_indices
                .iter()
                .enumerate()
                .map(|(k, &i)| Unit { label: format!("s{k}"), members: vec![i], cohesion: None }),
        );

        // Stage 2
        let generator = Generator::new(&self.gateway, &self.prompts);
        let format = generator.format_for(spec).map_err(|e| PipelineError::generation(tag("format"), e))?;
        let max_inv = max_inverse_cohesion(clustering.clusters.iter().map(|c| c.cohesion));
        let layer_mean = lower.artifacts.iter().map(|a| a.size).sum::<usize>() as f64 / lower.len() as f64;
        let sizing = |members: &[usize], cohesion: Option<f64>| {
            let sizes: Vec<usize> = members.iter().map(|&m| children[m].size).collect();
            let diversity = concept_diversity(cohesion, max_inv);
            let density = information_density(&sizes, layer_mean);
            (n_targets(diversity, density, members.len(), spec.n_target_bounds), diversity, density)
        };
        let generated: Vec<Result<(Vec<Artifact>, GenerationRecord), PipelineError>> = units
            .par_iter()
            .map(|u| {
                let (n, diversity, density) = sizing(&u.members, u.cohesion);
                let members: Vec<&Artifact> = u.members.iter().map(|&m| children[m]).collect();
                let out = generator
                    .generate(&members, spec, &format, n, index)
                    .map_err(|e| PipelineError::generation(format!("layer {index} generate cluster {}", u.label), e))?;
                let record = GenerationRecord {
                    cluster_ref: u.label.clone(),
                    source_ids: members.iter().map(|a| a.id.clone()).collect(),
                    generated_ids: Vec::new(),
                    n_targets: n,
                    concept_diversity: diversity,
                    information_density: density,
                };
                Ok((out, record))
            })
            .collect();
        let mut parents: Vec<Artifact> = Vec::new();
        let mut source_of: Vec<usize> = Vec::new();
        let mut records = Vec::new();
        for (u, result) in generated.into_iter().enumerate() {
            let (out, record) = result?;
            source_of.extend(std::iter::repeat_n(u, out.len()));
            parents.extend(out);
            records.push(record);
        }
        let mut parent_emb = self.embed(&tag("embed"), &parents.iter().collect::<Vec<_>>())?;

        // Stage 3, one pass
        let temp_ids: Vec<String> = (0..parents.len()).map(|i| format!("g{i}")).collect();
        let groups = find_duplicate_clusters(&temp_ids, &parent_emb, &source_of, &params)
            .map_err(|e| PipelineError::generation(tag("duplicates"), e))?;
        let mut removed = vec![false; parents.len()];
        let mut duplicate_groups = Vec::new();
        for (k, group) in groups.iter().enumerate() {
            let sources: Vec<Vec<(usize, f64)>> = group
                .iter()
                .map(|&g| {
                    units[source_of[g]]
                        .members
                        .iter()
                        .map(|&c| (c, cosine(&parent_emb[g], &child_emb[c])))
                        .collect()
                })
                .collect();
            let fresh = trace_duplicate_sources(&sources, DUPLICATE_SOURCE_TOLERANCE);
            let fresh_emb: Vec<Embedding> = fresh.iter().map(|&c| child_emb[c].clone()).collect();
            let cohesion = if fresh.len() >= 2 { cohesion_of(&fresh_emb).ok() } else { None };
            let (n, diversity, density) = sizing(&fresh, cohesion);
            // never more replacements than originals, so layers cannot grow
            let n = n.min(group.len());
            let previous: Vec<&Artifact> = group.iter().map(|&g| &parents[g]).collect();
            let members: Vec<&Artifact> = fresh.iter().map(|&c| children[c]).collect();
            let label = format!("d{k}");
            let replacements = generator
                .regenerate(&previous, &members, spec, &format, n, index)
                .map_err(|e| PipelineError::generation(format!("layer {index} regenerate {label}"), e))?;
            duplicate_groups.push(DuplicateGroup {
                replaced: previous.iter().map(|a| a.id.clone()).collect(),
                sources: members.iter().map(|a| a.id.clone()).collect(),
            });
            for &g in group {
                removed[g] = true;
            }
            let new_emb = self.embed(&tag("embed"), &replacements.iter().collect::<Vec<_>>())?;
            units.push(Unit { label: label.clone(), members: fresh.clone(), cohesion });
            records.push(GenerationRecord {
                cluster_ref: label,
                source_ids: members.iter().map(|a| a.id.clone()).collect(),
                generated_ids: Vec::new(),
                n_targets: n,
                concept_diversity: diversity,
                information_density: density,
            });
            for (a, e) in replacements.into_iter().zip(new_emb) {
                parents.push(a);
                parent_emb.push(e);
                source_of.push(units.len() - 1);
                removed.push(false);
            }
        }

        // assemble with final ids
        let mut layer = Layer::new(index, spec.artifact_type.clone());
        let mut kept_emb = Vec::new();
        let mut kept_unit = Vec::new();
        for (i, a) in parents.into_iter().enumerate() {
            if removed[i] {
                continue;
            }
            layer.push_unique(a);
            kept_emb.push(parent_emb[i].clone());
            kept_unit.push(source_of[i]);
            let id = layer.artifacts.last().map(|a| a.id.clone()).unwrap_or_default();
            if let Some(r) = records.get_mut(source_of[i]) {
                r.generated_ids.push(id);
            }
        }
        let parent_ids: Vec<String> = layer.artifacts.iter().map(|a| a.id.clone()).collect();

        // Stage 4
        let sim = SimilarityMatrix::compute(parent_ids.clone(), &kept_emb, child_ids.clone(), &child_emb)
            .map_err(|e| PipelineError::stage(tag("link"), e))?;
        let mut links = Vec::new();
        for (u, unit) in units.iter().enumerate() {
            let ps: Vec<usize> = (0..kept_unit.len()).filter(|&p| kept_unit[p] == u).collect();
            if ps.is_empty() {
                continue;
            }
            links.extend(
                link_intra_cluster(&ps, &unit.members, &sim, &self.config.links)
                    .map_err(|e| PipelineError::stage(format!("layer {index} link cluster {}", unit.label), e))?,
            );
        }
        let links = ensure_no_orphans(links, &sim).map_err(|e| PipelineError::stage(tag("link"), e))?;

        // Stage 5
        let pairwise: Vec<Vec<f64>> =
            kept_emb.iter().map(|a| kept_emb.iter().map(|b| cosine(a, b)).collect()).collect();
        let flags = detect_cross_duplicates(&parent_ids, &pairwise, &self.config.links);
        let links = share_links(&flags, links, &sim, &self.config.links);
        let (merged, links) = merge_duplicates(&flags, links, &sim);
        layer.artifacts.retain(|a| !merged.contains(&a.id));
        let links = ensure_no_orphans(links, &restrict_parents(&sim, &merged))
            .map_err(|e| PipelineError::stage(tag("link"), e))?;

        info!(
            layer = index,
            clusters = clustering.clusters.len(),
            singletons = clustering.singletons.len(),
            artifacts = layer.len(),
            links = links.len(),
            elapsed_ms = started.elapsed().as_millis() as u64,
            "layer generated"
        );
        Ok(LayerOutcome {
            layer,
            links,
            report: LayerReport {
                layer_index: index,
                clustering: cluster_report,
                records,
                duplicate_groups,
                flagged_pairs: flags,
                merged,
            },
        })
    }

    /// Summaries plus every configured layer.
    pub fn run_pipeline(&self) -> Result<(ArtifactTree, Vec<LayerReport>), PipelineError> {
        let layer0 = self.summarize()?;
        let mut tree = self.new_tree("hgen");
        tree.layers.push(layer0);
        let mut reports = Vec::new();
        for spec in &self.config.layers {
            let lower = tree.layers.last().expect("layer 0 present");
            let outcome = self.run_layer(lower, spec)?;
            tree.layers.push(outcome.layer);
            tree.links.extend(outcome.links);
            reports.push(outcome.report);
        }
        finish(tree).map(|t| (t, reports))
    }

    /// Flat comparison generator: no clustering or refinement, fixed link cutoff on
    /// min-max normalized similarity, orphans allowed.
    pub fn run_baseline(&self) -> Result<ArtifactTree, PipelineError> {
        let layer0 = self.summarize()?;
        let mut tree = self.new_tree("baseline");
        tree.provenance.insert("baseline_cutoff".into(), self.config.baseline_cutoff.to_string());
        tree.layers.push(layer0);
        let generator = Generator::new(&self.gateway, &self.prompts);
        for spec in &self.config.layers {
            let lower = tree.layers.last().expect("layer 0 present");
            let (layer, links) = self.baseline_layer(&generator, lower, spec)?;
            tree.layers.push(layer);
            tree.links.extend(links);
        }
        finish(tree)
    }

    fn baseline_layer(
        &self,
        generator: &Generator<'_>,
        lower: &Layer,
        spec: &LayerSpec,
    ) -> Result<(Layer, Vec<TraceLink>), PipelineError> {
        let index = lower.index + 1;
        let tag = |s: &str| format!("baseline layer {index} {s}");
        let format = generator.format_for(spec).map_err(|e| PipelineError::generation(tag("format"), e))?;
        let mut layer = Layer::new(index, spec.artifact_type.clone());
        for (b, batch) in baseline_batches(&lower.artifacts, self.config.baseline_batch_tokens).iter().enumerate() {
            let count = batch.len().div_ceil(2).max(1);
            let out = generator
                .baseline(batch, spec, &format, count, index)
                .map_err(|e| PipelineError::generation(format!("baseline layer {index} batch {b}"), e))?;
            out.into_iter().for_each(|a| layer.push_unique(a));
        }
        let parents: Vec<&Artifact> = layer.artifacts.iter().collect();
        let children: Vec<&Artifact> = lower.artifacts.iter().collect();
        let sim = SimilarityMatrix::compute(
            parents.iter().map(|a| a.id.clone()).collect(),
            &self.embed(&tag("embed"), &parents)?,
            children.iter().map(|a| a.id.clone()).collect(),
            &self.embed(&tag("embed"), &children)?,
        )
        .map_err(|e| PipelineError::stage(tag("link"), e))?;
        let links = baseline_links(&sim, self.config.baseline_cutoff);
        Ok((layer, links))
    }

    fn new_tree(&self, mode: &str) -> ArtifactTree {
        let mut tree = ArtifactTree::new(self.config.project.clone());
        let p = &mut tree.provenance;
        p.insert("mode".into(), mode.into());
        p.insert("config_digest".into(), self.config.digest());
        p.insert("completion_provider".into(), self.gateway.completion_id());
        p.insert("embedding_provider".into(), self.gateway.embedding_id());
        p.insert("prompts".into(), self.prompts.fingerprint());
        p.insert("seed".into(), self.config.seed.to_string());
        p.insert("generator".into(), format!("hgen {}", env!("CARGO_PKG_VERSION")));
        tree
    }
}

struct Unit {
    label: String,
    members: Vec<usize>,
    cohesion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DuplicateGroup {
    pub replaced: Vec<String>,
    pub sources: Vec<String>,
}

/// Inspection data for one generated layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    pub layer_index: usize,
    pub clustering: ClusterReport,
    pub records: Vec<GenerationRecord>,
    pub duplicate_groups: Vec<DuplicateGroup>,
    pub flagged_pairs: Vec<DuplicateFlag>,
    pub merged: Vec<String>,
}

pub struct LayerOutcome {
    pub layer: Layer,
    pub links: Vec<TraceLink>,
    pub report: LayerReport,
}

fn cosine(a: &Embedding, b: &Embedding) -> f64 {
    crate::provider::cosine_similarity(a, b).unwrap_or(0.0)
}

fn restrict_parents(sim: &SimilarityMatrix, removed: &[String]) -> SimilarityMatrix {
    let keep: Vec<usize> = (0..sim.parent_ids.len()).filter(|&p| !removed.contains(&sim.parent_ids[p])).collect();
    SimilarityMatrix::from_scores(
        keep.iter().map(|&p| sim.parent_ids[p].clone()).collect(),
        sim.child_ids.clone(),
        keep.iter().map(|&p| sim.scores[p].clone()).collect(),
    )
}

fn finish(mut tree: ArtifactTree) -> Result<ArtifactTree, PipelineError> {
    tree.sort_links();
    let violations = validate_tree(&tree);
    if let Some(v) = violations.first() {
        return Err(PipelineError::InvalidTree(format!("{v} ({} violation(s))", violations.len())));
    }
    Ok(tree)
}

/// Consecutive runs of artifacts whose rendered size fits `budget` tokens (at least one
/// artifact per batch).
pub fn baseline_batches(artifacts: &[Artifact], budget: usize) -> Vec<Vec<&Artifact>> {
    let mut out: Vec<Vec<&Artifact>> = Vec::new();
    let mut current: Vec<&Artifact> = Vec::new();
    let mut used = 0;
    for a in artifacts {
        let cost = estimate_tokens(&a.title) + estimate_tokens(&a.body) + 16;
        if !current.is_empty() && used + cost > budget {
            out.push(std::mem::take(&mut current));
            used = 0;
        }
        current.push(a);
        used += cost;
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Every pair whose min-max normalized score over the whole matrix is at least `cutoff`.
pub fn baseline_links(sim: &SimilarityMatrix, cutoff: f64) -> Vec<TraceLink> {
    let flat: Vec<f64> = sim.scores.iter().flatten().copied().collect();
    let norm = crate::trace::normalize(&flat, crate::trace::Normalization::MinMax);
    let cols = sim.child_ids.len();
    let mut links = Vec::new();
    for (k, n) in norm.iter().enumerate() {
        if *n >= cutoff {
            let (p, c) = (k / cols, k % cols);
            links.push(TraceLink {
                parent_id: sim.parent_ids[p].clone(),
                child_id: sim.child_ids[c].clone(),
                score: sim.scores[p][c].clamp(0.0, 1.0),
            });
        }
    }
    links
}

/// Loads a config file (or defaults) ready for overrides.
pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig, PipelineError> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

/// Children of each parent, for reports and exports.
pub fn children_by_parent(links: &[TraceLink]) -> BTreeMap<&str, Vec<&TraceLink>> {
    let mut out: BTreeMap<&str, Vec<&TraceLink>> = BTreeMap::new();
    for l in links {
        out.entry(l.parent_id.as_str()).or_default().push(l);
    }
    out
}
