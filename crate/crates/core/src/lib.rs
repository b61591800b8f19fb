//! Hierarchical documentation generation.
//!
//! Source files are summarized into layer-0 artifacts; each further layer is produced by
//! consensus clustering of the layer below, per-cluster generation through a completion
//! provider, duplicate refinement, and similarity-based trace linking. The [`eval`]
//! module scores a finished tree against expert ground truth.

pub mod cluster;
pub mod eval;
pub mod generate;
pub mod model;
pub mod pipeline;
pub mod prompts;
pub mod provider;
pub mod summarizer;
pub mod trace;
