//! Domain knowledge base and troubleshooting library used when the
//! taxonomy search finds nothing.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{dot, top_k, EmbeddingProvider};

const BUNDLED_KB: &str = include_str!("../assets/kb.jsonl");
const BUNDLED_LIBRARY: &str = include_str!("../assets/troubleshooting.md");

#[derive(Debug, thiserror::Error)]
pub enum KbError {
    #[error("knowledge base line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("knowledge base storage: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KbSnippet {
    pub id: String,
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KbHit {
    pub snippet: KbSnippet,
    pub similarity: f64,
}

/// Snippets with their embeddings.
pub struct KnowledgeBase {
    snippets: Vec<KbSnippet>,
    vectors: Vec<Vec<f64>>,
}

impl KnowledgeBase {
    pub fn new(snippets: Vec<KbSnippet>, provider: &dyn EmbeddingProvider) -> Self {
        let vectors = snippets.iter().map(|s| provider.embed(&format!("{}\n{}", s.title, s.text))).collect();
        KnowledgeBase { snippets, vectors }
    }

    pub fn parse(jsonl: &str, provider: &dyn EmbeddingProvider) -> Result<Self, KbError> {
        let mut snippets = Vec::new();
        for (i, line) in jsonl.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let s: KbSnippet =
                serde_json::from_str(line).map_err(|e| KbError::Parse { line: i + 1, reason: e.to_string() })?;
            snippets.push(s);
        }
        Ok(KnowledgeBase::new(snippets, provider))
    }

    pub fn load(path: &Path, provider: &dyn EmbeddingProvider) -> Result<Self, KbError> {
        KnowledgeBase::parse(&fs::read_to_string(path)?, provider)
    }

    pub fn bundled(provider: &dyn EmbeddingProvider) -> Self {
        KnowledgeBase::parse(BUNDLED_KB, provider).expect("bundled knowledge base parses")
    }

    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }

    pub fn snippets(&self) -> &[KbSnippet] {
        &self.snippets
    }

    /// Top-`k` snippets by cosine similarity, ties by ascending id.
    pub fn retrieve(&self, query: &str, k: usize, provider: &dyn EmbeddingProvider) -> Vec<KbHit> {
        let q = provider.embed(query);
        let scored = self.snippets.iter().zip(&self.vectors).map(|(s, v)| (s.id.as_str(), dot(&q, v), s));
        top_k(scored, k)
            .into_iter()
            .map(|(similarity, s)| KbHit { snippet: s.clone(), similarity })
            .collect()
    }
}

/// The troubleshooting library quoted into the exploration prompt.
pub fn bundled_library() -> &'static str {
    BUNDLED_LIBRARY
}

pub fn load_library(path: &Path) -> Result<String, KbError> {
    Ok(fs::read_to_string(path)?)
}
