//! Deterministic offline providers.
//!
//! `MockEmbedding` is a hashed bag of words: each token (maximal run of alphanumeric
//! characters, lowercased) is hashed with 64-bit FNV-1a and adds 1.0 to bucket
//! `hash % 256`; the vector is then L2-normalized. Text without tokens maps to the unit
//! vector at bucket `FNV_OFFSET % 256`. Output is bit-identical on every platform.
//!
//! `MockCompletion` first looks the request digest up in its canned table. Otherwise it
//! answers extractively from the `<code>`, `<outline>` and `<artifact>` blocks of the user
//! prompt, prefixed with the first 8 hex chars of the digest:
//! - if the prompt asks for `exactly N` items, it emits N items in the numbered
//!   `N. Title: ...` protocol, dealing the blocks out round-robin and using up to
//!   [`ITEM_WORDS`] distinct words (alphabetic, three letters or more) from each item's blocks;
//! - otherwise it returns up to [`SUMMARY_WORDS`] distinct words from all blocks.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use regex::Regex;

use super::{CompletionProvider, CompletionRequest, Embedding, EmbeddingProvider, ProviderError};

pub const MOCK_EMBEDDING_DIM: usize = 256;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub const SUMMARY_WORDS: usize = 80;
pub const ITEM_WORDS: usize = 40;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Raw mock vector for `text` (see module docs).
pub fn mock_embedding_vector(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; MOCK_EMBEDDING_DIM];
    let mut any = false;
    for token in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let bucket = (fnv1a(token.to_lowercase().as_bytes()) % MOCK_EMBEDDING_DIM as u64) as usize;
        v[bucket] += 1.0;
        any = true;
    }
    if !any {
        v[(FNV_OFFSET % MOCK_EMBEDDING_DIM as u64) as usize] = 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockEmbedding;

impl EmbeddingProvider for MockEmbedding {
    fn id(&self) -> String {
        format!("mock-embedding/fnv-bow-{MOCK_EMBEDDING_DIM}")
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError> {
        texts.iter().map(|t| Embedding::new(mock_embedding_vector(t))).collect()
    }
}

#[derive(Default)]
pub struct MockCompletion {
    canned: HashMap<String, String>,
    calls: Arc<AtomicUsize>,
}

impl MockCompletion {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a canned response for requests with this digest.
    pub fn with_response(mut self, digest: impl Into<String>, response: impl Into<String>) -> Self {
        self.canned.insert(digest.into(), response.into());
        self
    }

    /// Loads canned responses from a JSON object `{ "<digest>": "<response>", ... }`.
    pub fn with_canned_file(mut self, path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        let map: HashMap<String, String> = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        self.canned.extend(map);
        Ok(self)
    }

    /// Shared counter of provider invocations (cache hits never reach the provider).
    pub fn call_counter(&self) -> Arc<AtomicUsize> {
        self.calls.clone()
    }
}

impl CompletionProvider for MockCompletion {
    fn id(&self) -> String {
        "mock-completion/extractive-v1".into()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let digest = req.digest();
        if let Some(canned) = self.canned.get(&digest) {
            return Ok(canned.clone());
        }
        Ok(extractive_response(&digest, &req.user_prompt))
    }
}

fn block_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?s)<(code|outline|artifact)(?:\s[^>]*)?>(.*?)</(?:code|outline|artifact)>")
            .expect("valid regex")
    })
}

fn count_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bexactly\s+(\d+)\b").expect("valid regex"))
}

fn word_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b[A-Za-z]{3,}\b").expect("valid regex"))
}

fn distinct_words<'a>(texts: impl IntoIterator<Item = &'a str>, limit: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for text in texts {
        for m in word_re().find_iter(text) {
            let w = m.as_str().to_lowercase();
            if seen.insert(w.clone()) {
                out.push(w);
                if out.len() == limit {
                    return out;
                }
            }
        }
    }
    out
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn extractive_response(digest: &str, prompt: &str) -> String {
    let stub = &digest[..8];
    let blocks: Vec<&str> = block_re()
        .captures_iter(prompt)
        .map(|c| c.get(2).map_or("", |m| m.as_str()))
        .collect();
    let sources: Vec<&str> = if blocks.is_empty() { vec![prompt] } else { blocks };

    // only instructions count, not quoted material
    let instructions = block_re().replace_all(prompt, "");
    let Some(count) = count_re()
        .captures(&instructions)
        .and_then(|c| c[1].parse::<usize>().ok())
        .filter(|&n| n > 0)
    else {
        let words = distinct_words(sources.iter().copied(), SUMMARY_WORDS);
        return format!("{stub} {}.", words.join(" "));
    };

    let mut out = String::new();
    for item in 0..count {
        let assigned: Vec<&str> = if sources.len() >= count {
            sources.iter().skip(item).step_by(count).copied().collect()
        } else {
            vec![sources[item % sources.len()]]
        };
        let words = distinct_words(assigned.iter().copied(), ITEM_WORDS);
        let title: Vec<String> = words.iter().take(3).map(|w| capitalize(w)).collect();
        let title = if title.is_empty() { format!("Item {}", item + 1) } else { title.join(" ") };
        out.push_str(&format!(
            "{}. Title: {title}\n{stub}-{} {}.\n\n",
            item + 1,
            item + 1,
            words.join(" ")
        ));
    }
    out
}
