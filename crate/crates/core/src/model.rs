//! Artifact tree: layers of documentation artifacts joined by parent → child trace links.
//!
//! The tree is the persistent output of a pipeline run. It is serialized as canonical,
//! key-sorted JSON (see [`save_tree`]); parsing and validation are separate steps so a
//! structurally broken file can still be loaded and inspected with [`validate_tree`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Number of hex characters kept from the content hash.
pub const ID_HEX_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("malformed tree JSON at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("failed to serialize tree: {0}")]
    Serialize(#[from] serde_json::Error),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One documentation unit at any level of the hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub id: String,
    pub layer_index: usize,
    pub artifact_type: String,
    pub title: String,
    pub body: String,
    /// Set only for layer-0 artifacts, relative to the source root.
    pub source_path: Option<String>,
    /// Lines of code for layer 0, word count above it.
    pub size: usize,
}

impl Artifact {
    /// Builds a text artifact with a content-derived id and word-count size.
    pub fn text(layer_index: usize, artifact_type: &str, title: &str, body: &str) -> Self {
        Self {
            id: content_id(layer_index, artifact_type, title, body),
            layer_index,
            artifact_type: artifact_type.to_string(),
            title: title.to_string(),
            body: body.to_string(),
            source_path: None,
            size: word_count(body),
        }
    }

    /// Text used when embedding the artifact.
    pub fn embedding_text(&self) -> String {
        format!("{}\n{}", self.title, self.body)
    }
}

/// `sha256(layer_index, type, title, body)` truncated to [`ID_HEX_LEN`] hex chars.
pub fn content_id(layer_index: usize, artifact_type: &str, title: &str, body: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(layer_index.to_string().as_bytes());
    hasher.update([0u8]);
    hasher.update(artifact_type.as_bytes());
    hasher.update([0u8]);
    hasher.update(title.as_bytes());
    hasher.update([0u8]);
    hasher.update(body.as_bytes());
    let mut id = hex::encode(hasher.finalize());
    id.truncate(ID_HEX_LEN);
    id
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub index: usize,
    pub artifact_type: String,
    pub artifacts: Vec<Artifact>,
}

impl Layer {
    pub fn new(index: usize, artifact_type: impl Into<String>) -> Self {
        Self {
            index,
            artifact_type: artifact_type.into(),
            artifacts: Vec::new(),
        }
    }

    /// Appends an artifact, re-deriving its id if it collides with one already present.
    pub fn push_unique(&mut self, mut artifact: Artifact) {
        let taken: BTreeSet<&str> = self.artifacts.iter().map(|a| a.id.as_str()).collect();
        let mut salt = 0usize;
        while taken.contains(artifact.id.as_str()) {
            salt += 1;
            let salted = format!("{}\u{0}{}", artifact.body, salt);
            artifact.id = content_id(
                artifact.layer_index,
                &artifact.artifact_type,
                &artifact.title,
                &salted,
            );
        }
        self.artifacts.push(artifact);
    }

    pub fn len(&self) -> usize {
        self.artifacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.artifacts.is_empty()
    }
}

/// Directed parent → child relation between adjacent layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLink {
    #[serde(rename = "parent")]
    pub parent_id: String,
    #[serde(rename = "child")]
    pub child_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ArtifactTree {
    pub project_name: String,
    pub layers: Vec<Layer>,
    pub links: Vec<TraceLink>,
    pub provenance: BTreeMap<String, String>,
}

impl ArtifactTree {
    pub fn new(project_name: impl Into<String>) -> Self {
        Self {
            project_name: project_name.into(),
            ..Self::default()
        }
    }

    pub fn artifact_count(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    pub fn artifacts(&self) -> impl Iterator<Item = &Artifact> {
        self.layers.iter().flat_map(|l| l.artifacts.iter())
    }

    pub fn find(&self, id: &str) -> Option<&Artifact> {
        self.artifacts().find(|a| a.id == id)
    }

    /// Sorts links by (parent, child) so serialization is order-independent.
    pub fn sort_links(&mut self) {
        self.links.sort_by(|a, b| {
            (a.parent_id.as_str(), a.child_id.as_str())
                .cmp(&(b.parent_id.as_str(), b.child_id.as_str()))
        });
    }
}

/// A broken tree invariant. Violations are data, never failures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NonContiguousLayer { position: usize, index: usize },
    LayerMismatch { artifact: String, layer: usize, artifact_layer: usize },
    DuplicateId { id: String },
    EmptyBody { id: String },
    MissingSourcePath { id: String },
    UnexpectedSourcePath { id: String },
    DanglingParent { parent: String, child: String },
    DanglingChild { parent: String, child: String },
    NonAdjacentLayers { parent: String, child: String },
    DuplicateLink { parent: String, child: String },
    ScoreOutOfRange { parent: String, child: String, score: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonContiguousLayer { position, index } => {
                write!(f, "layer at position {position} has index {index}")
            }
            Violation::LayerMismatch { artifact, layer, artifact_layer } => write!(
                f,
                "artifact {artifact} has layer_index {artifact_layer} but sits in layer {layer}"
            ),
            Violation::DuplicateId { id } => write!(f, "duplicate artifact id {id}"),
            Violation::EmptyBody { id } => write!(f, "artifact {id} has an empty body"),
            Violation::MissingSourcePath { id } => {
                write!(f, "layer-0 artifact {id} has no source_path")
            }
            Violation::UnexpectedSourcePath { id } => {
                write!(f, "artifact {id} above layer 0 has a source_path")
            }
            Violation::DanglingParent { parent, child } => {
                write!(f, "dangling parent {parent} in link {parent} -> {child}")
            }
            Violation::DanglingChild { parent, child } => {
                write!(f, "dangling child {child} in link {parent} -> {child}")
            }
            Violation::NonAdjacentLayers { parent, child } => {
                write!(f, "non-adjacent layers in link {parent} -> {child}")
            }
            Violation::DuplicateLink { parent, child } => {
                write!(f, "duplicate link {parent} -> {child}")
            }
            Violation::ScoreOutOfRange { parent, child, score } => {
                write!(f, "link {parent} -> {child} has score {score} outside [0, 1]")
            }
        }
    }
}

/// Checks every structural invariant of `tree`. An empty result means the tree is valid.
pub fn validate_tree(tree: &ArtifactTree) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut layer_of: HashMap<&str, usize> = HashMap::new();

    for (position, layer) in tree.layers.iter().enumerate() {
        if layer.index != position {
            out.push(Violation::NonContiguousLayer { position, index: layer.index });
        }
        for a in &layer.artifacts {
            if a.layer_index != layer.index {
                out.push(Violation::LayerMismatch {
                    artifact: a.id.clone(),
                    layer: layer.index,
                    artifact_layer: a.layer_index,
                });
            }
            if layer_of.insert(a.id.as_str(), layer.index).is_some() {
                out.push(Violation::DuplicateId { id: a.id.clone() });
            }
            if a.body.trim().is_empty() {
                out.push(Violation::EmptyBody { id: a.id.clone() });
            }
            match (layer.index, &a.source_path) {
                (0, None) => out.push(Violation::MissingSourcePath { id: a.id.clone() }),
                (i, Some(_)) if i > 0 => {
                    out.push(Violation::UnexpectedSourcePath { id: a.id.clone() })
                }
                _ => {}
            }
        }
    }

    let mut seen = BTreeSet::new();
    for link in &tree.links {
        let (parent, child) = (link.parent_id.clone(), link.child_id.clone());
        let p = layer_of.get(link.parent_id.as_str()).copied();
        let c = layer_of.get(link.child_id.as_str()).copied();
        if p.is_none() {
            out.push(Violation::DanglingParent { parent: parent.clone(), child: child.clone() });
        }
        if c.is_none() {
            out.push(Violation::DanglingChild { parent: parent.clone(), child: child.clone() });
        }
        if let (Some(p), Some(c)) = (p, c) {
            if p != c + 1 {
                out.push(Violation::NonAdjacentLayers {
                    parent: parent.clone(),
                    child: child.clone(),
                });
            }
        }
        if !(0.0..=1.0).contains(&link.score) {
            out.push(Violation::ScoreOutOfRange {
                parent: parent.clone(),
                child: child.clone(),
                score: link.score.to_string(),
            });
        }
        if !seen.insert((parent.clone(), child.clone())) {
            out.push(Violation::DuplicateLink { parent, child });
        }
    }
    out
}

// Wire format. Artifacts do not repeat their layer index or type; both come from the layer.

#[derive(Serialize, Deserialize)]
struct TreeDoc {
    project: String,
    layers: Vec<LayerDoc>,
    links: Vec<TraceLink>,
    provenance: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    index: usize,
    artifact_type: String,
    artifacts: Vec<ArtifactDoc>,
}

#[derive(Serialize, Deserialize)]
struct ArtifactDoc {
    id: String,
    title: String,
    body: String,
    source_path: Option<String>,
    size: usize,
}

/// Serializes to canonical JSON: keys sorted, two-space indentation, trailing newline.
pub fn save_tree(tree: &ArtifactTree) -> Result<Vec<u8>, TreeError> {
    let doc = TreeDoc {
        project: tree.project_name.clone(),
        layers: tree
            .layers
            .iter()
            .map(|l| LayerDoc {
                index: l.index,
                artifact_type: l.artifact_type.clone(),
                artifacts: l
                    .artifacts
                    .iter()
                    .map(|a| ArtifactDoc {
                        id: a.id.clone(),
                        title: a.title.clone(),
                        body: a.body.clone(),
                        source_path: a.source_path.clone(),
                        size: a.size,
                    })
                    .collect(),
            })
            .collect(),
        links: tree.links.clone(),
        provenance: tree.provenance.clone(),
    };
    // Going through Value sorts object keys.
    let value = serde_json::to_value(&doc)?;
    let mut bytes = serde_json::to_vec_pretty(&value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn load_tree(bytes: &[u8]) -> Result<ArtifactTree, TreeError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let doc: TreeDoc = parse_tree_doc(de)?;
    Ok(ArtifactTree {
        project_name: doc.project,
        layers: doc
            .layers
            .into_iter()
            .map(|l| {
                let index = l.index;
                let artifact_type = l.artifact_type;
                Layer {
                    artifacts: l
                        .artifacts
                        .into_iter()
                        .map(|a| Artifact {
                            id: a.id,
                            layer_index: index,
                            artifact_type: artifact_type.clone(),
                            title: a.title,
                            body: a.body,
                            source_path: a.source_path,
                            size: a.size,
                        })
                        .collect(),
                    index,
                    artifact_type,
                }
            })
            .collect(),
        links: doc.links,
        provenance: doc.provenance,
    })
}

/// Deserializes while tracking the JSON path, so errors can name the offending location.
fn parse_tree_doc(de: &mut serde_json::Deserializer<serde_json::de::SliceRead<'_>>) -> Result<TreeDoc, TreeError> {
    // Parse to a Value first: syntax errors carry line/column, and shape errors are
    // located by walking the value against the schema.
    let value: serde_json::Value = serde::Deserialize::deserialize(&mut *de).map_err(|e| {
        TreeError::Parse {
            path: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        }
    })?;
    de.end().map_err(|e| TreeError::Parse {
        path: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    serde_json::from_value::<TreeDoc>(value.clone()).map_err(|e| TreeError::Parse {
        path: locate_shape_error(&value),
        message: e.to_string(),
    })
}

fn locate_shape_error(value: &serde_json::Value) -> String {
    use serde_json::Value;
    let Some(obj) = value.as_object() else {
        return "$".into();
    };
    for key in ["project", "layers", "links", "provenance"] {
        if !obj.contains_key(key) {
            return format!("$.{key}");
        }
    }
    if let Some(Value::Array(layers)) = obj.get("layers") {
        for (i, layer) in layers.iter().enumerate() {
            if serde_json::from_value::<LayerDoc>(layer.clone()).is_err() {
                if let Some(Value::Array(arts)) = layer.get("artifacts") {
                    for (j, a) in arts.iter().enumerate() {
                        if serde_json::from_value::<ArtifactDoc>(a.clone()).is_err() {
                            return format!("$.layers[{i}].artifacts[{j}]");
                        }
                    }
                }
                return format!("$.layers[{i}]");
            }
        }
    } else {
        return "$.layers".into();
    }
    if let Some(Value::Array(links)) = obj.get("links") {
        for (i, l) in links.iter().enumerate() {
            if serde_json::from_value::<TraceLink>(l.clone()).is_err() {
                return format!("$.links[{i}]");
            }
        }
    } else {
        return "$.links".into();
    }
    "$.provenance".into()
}

/// Writes `bytes` to `path` through a temporary file in the same directory and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), TreeError> {
    use std::io::Write;
    let io_err = |source| TreeError::Io { path: path.display().to_string(), source };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}
