//! Stage 0: source discovery, chunking and two-phase code summarization.

use std::path::{Path, PathBuf};

use globset::{Glob, GlobSet, GlobSetBuilder};
use rayon::prelude::*;
use thiserror::Error;
use tracing::warn;
use walkdir::WalkDir;

use crate::model::Artifact;
use crate::prompts::{values, PromptError, PromptKind, PromptSet};
use crate::provider::{CompletionRequest, Gateway, ProviderError};

/// Artifact type label of layer 0.
pub const CODE_ARTIFACT_TYPE: &str = "code";

/// Characters per estimated token.
const CHARS_PER_TOKEN: usize = 4;
const BINARY_SNIFF_BYTES: usize = 8000;

#[derive(Debug, Error)]
pub enum SummarizeError {
    #[error("cannot read source root {path}: {message}")]
    Root { path: String, message: String },
    #[error("invalid glob {pattern}: {message}")]
    Glob { pattern: String, message: String },
    #[error("{path}: empty source file")]
    EmptySource { path: String },
    #[error("{path}: {source}")]
    Provider {
        path: String,
        #[source]
        source: ProviderError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceFile {
    /// Path relative to the discovery root, `/`-separated.
    pub path: PathBuf,
    pub language: String,
    pub content: String,
    pub loc: usize,
}

impl SourceFile {
    pub fn new(path: impl Into<PathBuf>, content: impl Into<String>) -> Self {
        let path = path.into();
        let content = content.into();
        Self {
            language: language_for(&path).to_string(),
            loc: content.lines().count().max(1),
            path,
            content,
        }
    }

    pub fn path_str(&self) -> String {
        self.path.to_string_lossy().replace('\\', "/")
    }

    pub fn file_name(&self) -> String {
        self.path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    }

    pub fn stem(&self) -> String {
        self.path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    }
}

pub fn language_for(path: &Path) -> &'static str {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "java" => "Java",
        "rs" => "Rust",
        "py" => "Python",
        "js" | "mjs" | "cjs" => "JavaScript",
        "ts" | "tsx" => "TypeScript",
        "vue" => "Vue",
        "c" | "h" => "C",
        "cc" | "cpp" | "cxx" | "hpp" | "hh" => "C++",
        "cs" => "C#",
        "go" => "Go",
        "kt" | "kts" => "Kotlin",
        "swift" => "Swift",
        "rb" => "Ruby",
        "php" => "PHP",
        "scala" => "Scala",
        "sh" => "Shell",
        "sql" => "SQL",
        _ => "text",
    }
}

fn glob_set(patterns: &[String]) -> Result<GlobSet, SummarizeError> {
    let mut b = GlobSetBuilder::new();
    for p in patterns {
        let glob = Glob::new(p)
            .map_err(|e| SummarizeError::Glob { pattern: p.clone(), message: e.to_string() })?;
        b.add(glob);
    }
    b.build().map_err(|e| SummarizeError::Glob { pattern: patterns.join(","), message: e.to_string() })
}

/// Lists text files under `root` whose relative path matches `include` (all files when
/// empty) and no `exclude` pattern, in lexicographic path order. Hidden entries and
/// binary files are skipped; unreadable files are skipped with a warning.
pub fn discover_sources(
    root: &Path,
    include: &[String],
    exclude: &[String],
) -> Result<Vec<SourceFile>, SummarizeError> {
    let meta = std::fs::metadata(root).map_err(|e| SummarizeError::Root {
        path: root.display().to_string(),
        message: e.to_string(),
    })?;
    if !meta.is_dir() {
        return Err(SummarizeError::Root {
            path: root.display().to_string(),
            message: "not a directory".into(),
        });
    }
    let include = glob_set(include)?;
    let exclude = glob_set(exclude)?;

    let mut out = Vec::new();
    let walker = WalkDir::new(root).sort_by_file_name().into_iter().filter_entry(|e| {
        e.depth() == 0 || !e.file_name().to_string_lossy().starts_with('.')
    });
    for entry in walker {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                warn!(error = %e, "skipping unreadable entry");
                continue;
            }
        };
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(root).unwrap_or(entry.path()).to_path_buf();
        if (!include.is_empty() && !include.is_match(&rel)) || exclude.is_match(&rel) {
            continue;
        }
        let bytes = match std::fs::read(entry.path()) {
            Ok(b) => b,
            Err(e) => {
                warn!(path = %rel.display(), error = %e, "skipping unreadable file");
                continue;
            }
        };
        if bytes[..bytes.len().min(BINARY_SNIFF_BYTES)].contains(&0) {
            continue;
        }
        out.push(SourceFile::new(rel, String::from_utf8_lossy(&bytes).into_owned()));
    }
    out.sort_by_key(|a| a.path_str());
    Ok(out)
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(CHARS_PER_TOKEN)
}

/// Splits at line boundaries into chunks of at most `budget` estimated tokens. A line
/// longer than the budget becomes a chunk by itself. Concatenating the chunks gives back
/// the original content.
pub fn chunk_source(file: &SourceFile, budget: usize) -> Vec<String> {
    let limit = budget.max(1) * CHARS_PER_TOKEN;
    let mut chunks = Vec::new();
    let mut current = String::new();
    let mut current_chars = 0;
    for line in file.content.split_inclusive('\n') {
        let n = line.chars().count();
        if current_chars > 0 && current_chars + n > limit {
            chunks.push(std::mem::take(&mut current));
            current_chars = 0;
        }
        current.push_str(line);
        current_chars += n;
    }
    if !current.is_empty() || chunks.is_empty() {
        chunks.push(current);
    }
    chunks
}

pub fn outline_request(
    prompts: &PromptSet,
    file: &SourceFile,
    chunk: &str,
    index: usize,
    total: usize,
) -> Result<CompletionRequest, PromptError> {
    let chunk_label = if total <= 1 {
        "the full content".to_string()
    } else {
        format!("part {} of {}", index + 1, total)
    };
    prompts.get(PromptKind::SummarizeOutline).render(&values([
        ("chunk_label", chunk_label),
        ("language", file.language.clone()),
        ("file_name", file.path_str()),
        ("content", chunk.to_string()),
    ]))
}

pub fn polish_request(
    prompts: &PromptSet,
    file: &SourceFile,
    outlines: &[String],
) -> Result<CompletionRequest, PromptError> {
    prompts.get(PromptKind::SummarizePolish).render(&values([
        ("language", file.language.clone()),
        ("file_name", file.path_str()),
        ("outline", outlines.join("\n\n")),
    ]))
}

pub struct Summarizer<'a> {
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptSet,
    /// Token budget per chunk sent for outlining.
    pub chunk_budget: usize,
}

impl<'a> Summarizer<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptSet) -> Self {
        Self { gateway, prompts, chunk_budget: 24_000 }
    }

    /// Outlines each chunk, then polishes the joined outlines into one summary.
    pub fn summarize_code(&self, file: &SourceFile) -> Result<Artifact, SummarizeError> {
        if file.content.trim().is_empty() {
            return Err(SummarizeError::EmptySource { path: file.path_str() });
        }
        let provider_err = |source| SummarizeError::Provider { path: file.path_str(), source };
        let chunks = chunk_source(file, self.chunk_budget);
        let mut outlines = Vec::with_capacity(chunks.len());
        for (i, chunk) in chunks.iter().enumerate() {
            let req = outline_request(self.prompts, file, chunk, i, chunks.len())?;
            outlines.push(self.gateway.complete(&req).map_err(provider_err)?);
        }
        let req = polish_request(self.prompts, file, &outlines)?;
        let summary = self.gateway.complete(&req).map_err(provider_err)?;

        let mut artifact = Artifact::text(0, CODE_ARTIFACT_TYPE, &file.stem(), summary.trim());
        artifact.source_path = Some(file.path_str());
        artifact.size = file.loc;
        Ok(artifact)
    }

    /// Summarizes every file concurrently; results keep the input (path) order.
    pub fn summarize_all(&self, files: &[SourceFile]) -> Vec<Result<Artifact, SummarizeError>> {
        files.par_iter().map(|f| self.summarize_code(f)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(root: &Path, rel: &str, content: &[u8]) {
        let p = root.join(rel);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, content).unwrap();
    }

    #[test]
    fn discovers_in_path_order() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "b/Villain.java", b"class Villain {}\n");
        write(dir.path(), "a/Hero.java", b"class Hero {}\n");
        write(dir.path(), "Crime.java", b"class Crime {}\n");
        write(dir.path(), "notes.md", b"# notes\n");
        let files = discover_sources(dir.path(), &["**/*.java".into()], &[]).unwrap();
        let paths: Vec<String> = files.iter().map(SourceFile::path_str).collect();
        assert_eq!(paths, ["Crime.java", "a/Hero.java", "b/Villain.java"]);
        assert!(files.iter().all(|f| f.language == "Java" && f.loc == 1));
    }

    #[test]
    fn exclude_removes_matches() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "src/Hero.java", b"class Hero {}\n");
        write(dir.path(), "src/test/HeroTest.java", b"class HeroTest {}\n");
        let files =
            discover_sources(dir.path(), &["**/*.java".into()], &["**/test/**".into()]).unwrap();
        assert_eq!(files.len(), 1);
        assert_eq!(files[0].path_str(), "src/Hero.java");
    }

    #[test]
    fn empty_dir_and_binary_skip() {
        let dir = tempfile::tempdir().unwrap();
        assert!(discover_sources(dir.path(), &[], &[]).unwrap().is_empty());
        write(dir.path(), "blob.bin", &[0x89, b'P', 0, 1, 2]);
        write(dir.path(), ".git/config", b"[core]\n");
        assert!(discover_sources(dir.path(), &[], &[]).unwrap().is_empty());
    }

    #[test]
    fn missing_root_is_error() {
        let err = discover_sources(Path::new("/definitely/not/here"), &[], &[]).unwrap_err();
        assert!(matches!(err, SummarizeError::Root { .. }));
    }

    #[test]
    fn small_file_is_one_chunk() {
        let f = SourceFile::new("a.rs", "fn main() {}\n");
        assert_eq!(chunk_source(&f, 100), vec!["fn main() {}\n".to_string()]);
    }

    #[test]
    fn thousand_lines_three_chunks() {
        // 1000 lines of 20 chars (19 + newline) = 20_000 chars; budget 2000 tokens
        // = 8000 chars = 400 lines per chunk -> 400 + 400 + 200.
        let content: String = (0..1000).map(|i| format!("line {i:>14}\n")).collect();
        let f = SourceFile::new("big.java", content.clone());
        let chunks = chunk_source(&f, 2000);
        assert_eq!(chunks.len(), 3);
        assert_eq!(chunks.concat(), content);
        assert!(chunks.iter().all(|c| estimate_tokens(c) <= 2000));
        assert!(chunks.iter().all(|c| c.ends_with('\n')));
    }

    #[test]
    fn tiny_budget_gives_one_line_per_chunk() {
        let f = SourceFile::new("x.py", "first long line\nsecond long line\nthird");
        let chunks = chunk_source(&f, 1);
        assert_eq!(chunks, vec!["first long line\n", "second long line\n", "third"]);
    }

    #[test]
    fn empty_file_errors() {
        let gw = Gateway::mock();
        let prompts = PromptSet::builtin();
        let s = Summarizer::new(&gw, &prompts);
        let err = s.summarize_code(&SourceFile::new("Empty.java", "")).unwrap_err();
        assert!(err.to_string().contains("empty source file"));
    }

    #[test]
    fn multi_chunk_file_outlines_each_chunk() {
        use crate::provider::{MockCompletion, MockEmbedding};
        let mock = MockCompletion::new();
        let calls = mock.call_counter();
        let gw = Gateway::new(Box::new(mock), Box::new(MockEmbedding), 1);
        let prompts = PromptSet::builtin();
        let mut s = Summarizer::new(&gw, &prompts);
        s.chunk_budget = 5;
        let f = SourceFile::new("Shop.java", "class Shop {\n  int price;\n  void buy() {}\n}\n");
        let chunks = chunk_source(&f, 5).len();
        let a = s.summarize_code(&f).unwrap();
        assert_eq!(calls.load(std::sync::atomic::Ordering::SeqCst), chunks + 1);
        assert_eq!(a.title, "Shop");
        assert_eq!(a.source_path.as_deref(), Some("Shop.java"));
        assert_eq!(a.size, 4);
    }
}
