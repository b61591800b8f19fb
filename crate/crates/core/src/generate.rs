//! Per-cluster generation of the next layer's artifacts and duplicate refinement.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::cluster::{cluster_layer, percentile, ClusterError, ClusterParams};
use crate::model::Artifact;
use crate::prompts::{values, PromptError, PromptKind, PromptSet};
use crate::provider::{CompletionRequest, Embedding, Gateway, ProviderError};

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("expected {expected} artifacts, provider returned {got} after a corrective retry")]
    TooFew { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub artifact_type: String,
    #[serde(default)]
    pub format_template: Option<String>,
    #[serde(default = "default_bounds")]
    pub n_target_bounds: (f64, f64),
}

fn default_bounds() -> (f64, f64) {
    (0.5, 1.0)
}

impl LayerSpec {
    pub fn new(artifact_type: impl Into<String>) -> Self {
        Self { artifact_type: artifact_type.into(), format_template: None, n_target_bounds: default_bounds() }
    }

    pub fn validate(&self) -> Result<(), GenerateError> {
        if self.artifact_type.trim().is_empty() {
            return Err(GenerateError::Argument("artifact type must be non-empty".into()));
        }
        let (lo, hi) = self.n_target_bounds;
        if !(lo > 0.0 && lo < hi && hi <= 1.0) {
            return Err(GenerateError::Argument(format!(
                "n_target_bounds must satisfy 0 < lower < upper <= 1, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

/// Bookkeeping for one generation unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationRecord {
    pub cluster_ref: String,
    pub source_ids: Vec<String>,
    pub generated_ids: Vec<String>,
    pub n_targets: usize,
    pub concept_diversity: f64,
    pub information_density: f64,
}

/// Largest `1/h` over clusters with positive cohesion (1.0 when there are none).
pub fn max_inverse_cohesion(cohesions: impl IntoIterator<Item = f64>) -> f64 {
    cohesions
        .into_iter()
        .filter(|h| *h > 0.0)
        .map(|h| 1.0 / h)
        .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
        .unwrap_or(1.0)
}

/// Inverse cohesion scaled by the layer maximum. Nonpositive or missing cohesion is
/// treated as maximally diverse.
pub fn concept_diversity(cohesion: Option<f64>, max_inverse: f64) -> f64 {
    match cohesion {
        Some(h) if h > 0.0 => ((1.0 / h) / max_inverse).min(1.0),
        _ => 1.0,
    }
}

pub fn information_density(member_sizes: &[usize], layer_mean_size: f64) -> f64 {
    if layer_mean_size <= 0.0 {
        return member_sizes.len() as f64;
    }
    member_sizes.iter().sum::<usize>() as f64 / layer_mean_size
}

/// `trunc(diversity * density)` kept strictly inside `(lo * size, hi * size)`; clusters of
/// size <= 2 get one artifact.
pub fn n_targets(diversity: f64, density: f64, size: usize, bounds: (f64, f64)) -> usize {
    if size <= 2 {
        return 1;
    }
    let raw = (diversity * density).trunc().max(0.0) as usize;
    let n = size as f64;
    let lo = (bounds.0 * n).floor() as usize + 1;
    let hi = ((bounds.1 * n).ceil() as usize).saturating_sub(1).max(1);
    raw.clamp(lo.min(hi), hi)
}

fn item_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^\s*\d+\s*[.)]\s*Title:\s*(.*?)\s*$").expect("valid regex"))
}

/// Parses the numbered `N. Title: ...` protocol into `(title, body)` pairs. Items with an
/// empty title or body are dropped.
pub fn parse_items(text: &str) -> Vec<(String, String)> {
    let heads: Vec<(usize, usize, String)> = item_re()
        .captures_iter(text)
        .map(|c| {
            let m = c.get(0).expect("whole match");
            (m.start(), m.end(), c[1].trim_matches(|ch: char| ch == '*' || ch.is_whitespace()).to_string())
        })
        .collect();
    let mut out = Vec::new();
    for (k, (_, end, title)) in heads.iter().enumerate() {
        let stop = heads.get(k + 1).map_or(text.len(), |h| h.0);
        let body = text[*end..stop].trim().to_string();
        if !title.is_empty() && !body.is_empty() {
            out.push((title.clone(), body));
        }
    }
    out
}

pub fn render_artifacts(members: &[&Artifact]) -> String {
    members
        .iter()
        .map(|a| format!("<artifact id=\"{}\" title=\"{}\">\n{}\n</artifact>", a.id, a.title, a.body))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn render_previous(previous: &[&Artifact]) -> String {
    previous
        .iter()
        .map(|a| format!("<previous title=\"{}\">\n{}\n</previous>", a.title, a.body))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Completion-backed generation with a per-run cache of artifact formats.
pub struct Generator<'a> {
    gateway: &'a Gateway,
    prompts: &'a PromptSet,
    formats: Mutex<BTreeMap<String, String>>,
}

impl<'a> Generator<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptSet) -> Self {
        Self { gateway, prompts, formats: Mutex::new(BTreeMap::new()) }
    }

    /// The layer's own template, else one generated once per artifact type.
    pub fn format_for(&self, spec: &LayerSpec) -> Result<String, GenerateError> {
        if let Some(t) = &spec.format_template {
            return Ok(t.clone());
        }
        self.generate_format(&spec.artifact_type)
    }

    pub fn generate_format(&self, artifact_type: &str) -> Result<String, GenerateError> {
        if artifact_type.trim().is_empty() {
            return Err(GenerateError::Argument("artifact type must be non-empty".into()));
        }
        if let Some(f) = self.formats.lock().unwrap_or_else(|e| e.into_inner()).get(artifact_type) {
            return Ok(f.clone());
        }
        let req = self
            .prompts
            .get(PromptKind::ArtifactFormat)
            .render(&values([("artifact_type", artifact_type.to_string())]))?;
        let format = self.gateway.complete(&req)?;
        self.formats
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(artifact_type.to_string(), format.clone());
        Ok(format)
    }

    pub fn generate(
        &self,
        members: &[&Artifact],
        spec: &LayerSpec,
        format: &str,
        count: usize,
        layer_index: usize,
    ) -> Result<Vec<Artifact>, GenerateError> {
        let req = self.prompts.get(PromptKind::GenerateArtifacts).render(&values([
            ("artifacts", render_artifacts(members)),
            ("count", count.to_string()),
            ("artifact_type", spec.artifact_type.clone()),
            ("format", format.to_string()),
        ]))?;
        self.request_items(req, count, spec, layer_index)
    }

    pub fn regenerate(
        &self,
        previous: &[&Artifact],
        members: &[&Artifact],
        spec: &LayerSpec,
        format: &str,
        count: usize,
        layer_index: usize,
    ) -> Result<Vec<Artifact>, GenerateError> {
        let req = self.prompts.get(PromptKind::RegenerateArtifacts).render(&values([
            ("previous", render_previous(previous)),
            ("artifacts", render_artifacts(members)),
            ("count", count.to_string()),
            ("artifact_type", spec.artifact_type.clone()),
            ("format", format.to_string()),
        ]))?;
        self.request_items(req, count, spec, layer_index)
    }

    pub fn baseline(
        &self,
        members: &[&Artifact],
        spec: &LayerSpec,
        format: &str,
        count: usize,
        layer_index: usize,
    ) -> Result<Vec<Artifact>, GenerateError> {
        let req = self.prompts.get(PromptKind::BaselineGenerate).render(&values([
            ("artifacts", render_artifacts(members)),
            ("count", count.to_string()),
            ("artifact_type", spec.artifact_type.clone()),
            ("format", format.to_string()),
        ]))?;
        self.request_items(req, count, spec, layer_index)
    }

    /// One request, one corrective retry on a wrong item count; surplus items are cut.
    fn request_items(
        &self,
        req: CompletionRequest,
        count: usize,
        spec: &LayerSpec,
        layer_index: usize,
    ) -> Result<Vec<Artifact>, GenerateError> {
        if count == 0 {
            return Err(GenerateError::Argument("artifact count must be positive".into()));
        }
        let mut items = parse_items(&self.gateway.complete(&req)?);
        if items.len() != count {
            let problem = format!("expected {count} numbered items but found {}", items.len());
            let fix = self.prompts.get(PromptKind::CorrectCount).render(&values([
                ("problem", problem),
                ("count", count.to_string()),
            ]))?;
            let mut retry = req.clone();
            retry.user_prompt = format!("{}\n\n{}", req.user_prompt, fix.user_prompt);
            items = parse_items(&self.gateway.complete(&retry)?);
            if items.len() < count {
                return Err(GenerateError::TooFew { expected: count, got: items.len() });
            }
            if items.len() > count {
                warn!(expected = count, got = items.len(), "provider returned extra items; truncating");
                items.truncate(count);
            }
        }
        Ok(items
            .into_iter()
            .map(|(title, body)| Artifact::text(layer_index, &spec.artifact_type, &title, &body))
            .collect())
    }
}

/// Groups of generated artifacts that re-cluster tightly (cohesion at or above the 75th
/// percentile of the re-clustering) and come from at least two source clusters.
pub fn find_duplicate_clusters(
    ids: &[String],
    embeddings: &[Embedding],
    source_of: &[usize],
    params: &ClusterParams,
) -> Result<Vec<Vec<usize>>, GenerateError> {
    if ids.len() < 2 {
        return Ok(Vec::new());
    }
    let (clustering, _) = cluster_layer(0, ids, embeddings, params)?;
    let cohesions: Vec<f64> = clustering.clusters.iter().map(|c| c.cohesion).collect();
    let Some(cut) = percentile(&cohesions, 75.0) else {
        return Ok(Vec::new());
    };
    Ok(clustering
        .clusters
        .iter()
        .filter(|c| c.cohesion >= cut)
        .filter(|c| c.members.iter().map(|&m| source_of[m]).collect::<BTreeSet<_>>().len() >= 2)
        .map(|c| c.members.clone())
        .collect())
}

/// Union over the group of each artifact's source members scoring within `tolerance` of
/// that artifact's best source match. `sources[k]` lists `(child index, similarity)` for
/// the k-th group member.
pub fn trace_duplicate_sources(sources: &[Vec<(usize, f64)>], tolerance: f64) -> Vec<usize> {
    let mut out = BTreeSet::new();
    for candidates in sources {
        let best = candidates.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        out.extend(candidates.iter().filter(|c| c.1 >= best - tolerance - 1e-12).map(|c| c.0));
    }
    out.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_numbered_protocol() {
        let text = "1. Title: Customize Character\nAs a player, I want to pick a name.\n\n2) Title: **Inventory**\nAs a player, I want to see items.\nMore text.\n3. Title: Empty\n";
        let items = parse_items(text);
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].0, "Customize Character");
        assert_eq!(items[1].0, "Inventory");
        assert_eq!(items[1].1, "As a player, I want to see items.\nMore text.");
    }

    #[test]
    fn bounds_and_degenerate_sizes() {
        assert_eq!(n_targets(1.0, 9.0, 4, (0.5, 1.0)), 3);
        assert_eq!(n_targets(0.1, 1.0, 4, (0.5, 1.0)), 3);
        assert_eq!(n_targets(1.0, 100.0, 1, (0.5, 1.0)), 1);
        assert_eq!(n_targets(1.0, 100.0, 2, (0.5, 1.0)), 1);
        assert_eq!(n_targets(1.0, 100.0, 10, (0.5, 1.0)), 9);
        assert_eq!(n_targets(0.0, 0.0, 10, (0.5, 1.0)), 6);
    }

    #[test]
    fn diversity_guard() {
        let max = max_inverse_cohesion([0.5, 0.8, -0.1]);
        assert_eq!(max, 2.0);
        assert_eq!(concept_diversity(Some(0.5), max), 1.0);
        assert_eq!(concept_diversity(Some(0.8), max), 0.625);
        assert_eq!(concept_diversity(Some(-0.1), max), 1.0);
        assert_eq!(concept_diversity(None, max), 1.0);
    }

    #[test]
    fn spec_validation() {
        assert!(LayerSpec::new("").validate().is_err());
        let mut s = LayerSpec::new("epic");
        s.n_target_bounds = (0.6, 0.5);
        assert!(s.validate().is_err());
        assert!(LayerSpec::new("epic").validate().is_ok());
    }
}
