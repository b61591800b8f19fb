//! Versioned prompt templates.
//!
//! A template file holds optional `#` header lines, then a `### system` section and a
//! `### user` section. `{{name}}` placeholders are filled by [`Template::render`]. The
//! built-in set is compiled in; a directory with same-named files overrides it.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::provider::CompletionRequest;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {name}: {message}")]
    Malformed { name: String, message: String },
    #[error("template {name}: no value for placeholder {{{{{placeholder}}}}}")]
    MissingValue { name: String, placeholder: String },
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PromptKind {
    SummarizeOutline,
    SummarizePolish,
    ArtifactFormat,
    GenerateArtifacts,
    RegenerateArtifacts,
    CorrectCount,
    BaselineGenerate,
}

impl PromptKind {
    pub const ALL: [PromptKind; 7] = [
        PromptKind::SummarizeOutline,
        PromptKind::SummarizePolish,
        PromptKind::ArtifactFormat,
        PromptKind::GenerateArtifacts,
        PromptKind::RegenerateArtifacts,
        PromptKind::CorrectCount,
        PromptKind::BaselineGenerate,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            PromptKind::SummarizeOutline => "summarize_outline.v1.txt",
            PromptKind::SummarizePolish => "summarize_polish.v1.txt",
            PromptKind::ArtifactFormat => "artifact_format.v1.txt",
            PromptKind::GenerateArtifacts => "generate_artifacts.v1.txt",
            PromptKind::RegenerateArtifacts => "regenerate_artifacts.v1.txt",
            PromptKind::CorrectCount => "correct_count.v1.txt",
            PromptKind::BaselineGenerate => "baseline_generate.v1.txt",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            PromptKind::SummarizeOutline => include_str!("../prompts/summarize_outline.v1.txt"),
            PromptKind::SummarizePolish => include_str!("../prompts/summarize_polish.v1.txt"),
            PromptKind::ArtifactFormat => include_str!("../prompts/artifact_format.v1.txt"),
            PromptKind::GenerateArtifacts => include_str!("../prompts/generate_artifacts.v1.txt"),
            PromptKind::RegenerateArtifacts => {
                include_str!("../prompts/regenerate_artifacts.v1.txt")
            }
            PromptKind::CorrectCount => include_str!("../prompts/correct_count.v1.txt"),
            PromptKind::BaselineGenerate => include_str!("../prompts/baseline_generate.v1.txt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub name: String,
    pub system: String,
    pub user: String,
}

impl Template {
    pub fn parse(name: &str, text: &str) -> Result<Self, PromptError> {
        let malformed = |message: &str| PromptError::Malformed {
            name: name.to_string(),
            message: message.to_string(),
        };
        let sys_at = text.find("### system").ok_or_else(|| malformed("missing ### system"))?;
        let user_at = text.find("### user").ok_or_else(|| malformed("missing ### user"))?;
        if user_at < sys_at {
            return Err(malformed("### user must follow ### system"));
        }
        let system = text[sys_at + "### system".len()..user_at].trim().to_string();
        let user = text[user_at + "### user".len()..].trim().to_string();
        if user.is_empty() {
            return Err(malformed("empty user section"));
        }
        Ok(Self { name: name.to_string(), system, user })
    }

    /// Substitutes every `{{key}}`. Unknown placeholders are an error.
    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<CompletionRequest, PromptError> {
        Ok(CompletionRequest::new(
            fill(&self.name, &self.system, values)?,
            fill(&self.name, &self.user, values)?,
        ))
    }
}

fn fill(name: &str, text: &str, values: &BTreeMap<&str, String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or_else(|| PromptError::Malformed {
            name: name.to_string(),
            message: "unterminated placeholder".into(),
        })?;
        let key = after[..end].trim();
        let value = values.get(key).ok_or_else(|| PromptError::MissingValue {
            name: name.to_string(),
            placeholder: key.to_string(),
        })?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<PromptKind, Template>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        let templates = PromptKind::ALL
            .iter()
            .map(|&k| {
                let t = Template::parse(k.file_name(), k.builtin()).expect("built-in template parses");
                (k, t)
            })
            .collect();
        Self { templates }
    }

    /// Built-ins, with any same-named file in `dir` taking precedence.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        for kind in PromptKind::ALL {
            let path = dir.join(kind.file_name());
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                set.templates.insert(kind, Template::parse(kind.file_name(), &text)?);
            }
        }
        Ok(set)
    }

    pub fn get(&self, kind: PromptKind) -> &Template {
        &self.templates[&kind]
    }

    /// Identifier recorded in tree provenance: template names plus a digest of their text.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for t in self.templates.values() {
            h.update(t.name.as_bytes());
            h.update(t.system.as_bytes());
            h.update(t.user.as_bytes());
        }
        let mut d = hex::encode(h.finalize());
        d.truncate(16);
        format!("v1:{d}")
    }
}

/// Convenience for building placeholder maps.
pub fn values<const N: usize>(pairs: [(&'static str, String); N]) -> BTreeMap<&'static str, String> {
    pairs.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_and_have_both_sections() {
        let set = PromptSet::builtin();
        for k in PromptKind::ALL {
            assert!(!set.get(k).user.is_empty(), "{k:?}");
        }
    }

    #[test]
    fn render_fills_placeholders() {
        let t = Template::parse("t", "### system\nS {{a}}\n### user\nU {{ b }} {{a}}").unwrap();
        let req = t.render(&values([("a", "1".into()), ("b", "2".into())])).unwrap();
        assert_eq!(req.system_prompt, "S 1");
        assert_eq!(req.user_prompt, "U 2 1");
        assert_eq!(req.temperature, 0.0);
    }

    #[test]
    fn missing_value_is_error() {
        let t = Template::parse("t", "### system\nS\n### user\n{{nope}}").unwrap();
        assert!(matches!(t.render(&values([])), Err(PromptError::MissingValue { .. })));
    }

    #[test]
    fn override_directory_wins() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("artifact_format.v1.txt"),
            "### system\ncustom\n### user\nformat for {{artifact_type}}",
        )
        .unwrap();
        let set = PromptSet::with_overrides(dir.path()).unwrap();
        assert_eq!(set.get(PromptKind::ArtifactFormat).system, "custom");
        assert_ne!(set.fingerprint(), PromptSet::builtin().fingerprint());
    }
}
