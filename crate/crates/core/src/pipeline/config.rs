use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::ClusterParams;
use crate::generate::LayerSpec;
use crate::provider::ProviderConfig;
use crate::trace::LinkParams;

use super::PipelineError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    pub root: Option<PathBuf>,
    /// Globs over paths relative to `root`; empty means every file.
    pub include: Vec<String>,
    pub exclude: Vec<String>,
}

/// Everything a run depends on. Loaded from TOML; every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub project: String,
    pub seed: u64,
    pub baseline_cutoff: f64,
    /// Token budget of one baseline generation batch.
    pub baseline_batch_tokens: usize,
    /// Token budget of one summarization chunk.
    pub chunk_tokens: usize,
    pub source: SourceConfig,
    /// Layers above the code layer, bottom-up.
    pub layers: Vec<LayerSpec>,
    pub cluster: ClusterParams,
    pub links: LinkParams,
    pub completion: ProviderConfig,
    pub embedding: ProviderConfig,
    pub cache_dir: Option<PathBuf>,
    pub prompt_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            project: "project".into(),
            seed: 0,
            baseline_cutoff: 0.7,
            baseline_batch_tokens: 24_000,
            chunk_tokens: 24_000,
            source: SourceConfig::default(),
            layers: vec![LayerSpec::new("user story"), LayerSpec::new("epic")],
            cluster: ClusterParams::default(),
            links: LinkParams::default(),
            completion: ProviderConfig::default(),
            embedding: ProviderConfig::default(),
            cache_dir: None,
            prompt_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |m: String| Err(PipelineError::Config(m));
        if self.layers.is_empty() {
            return cfg("at least one layer spec is required".into());
        }
        for spec in &self.layers {
            spec.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        self.cluster.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.links.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.completion.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.embedding.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if !self.baseline_cutoff.is_finite() {
            return cfg("baseline_cutoff must be finite".into());
        }
        if self.baseline_batch_tokens == 0 || self.chunk_tokens == 0 {
            return cfg("token budgets must be positive".into());
        }
        Ok(())
    }

    /// Digest of the settings that shape the output. Filesystem locations are left out so
    /// the same project produces the same tree wherever it is checked out.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.source.root = None;
        c.cache_dir = None;
        c.prompt_dir = None;
        let value = serde_json::to_value(&c).unwrap_or_default();
        let canonical = serde_json::to_string(&value).unwrap_or_default();
        let mut d = hex::encode(Sha256::digest(canonical.as_bytes()));
        d.truncate(16);
        d
    }
}
