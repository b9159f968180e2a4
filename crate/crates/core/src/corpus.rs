//! Historical incident database.
//!
//! Records are embedded with an [`EmbeddingProvider`] and retrieved by cosine
//! similarity. On disk a store is a JSONL file (one record per line) plus a
//! sidecar of little-endian `f32` vectors in the same order.
//!
//! `IncidentStore` takes `&mut self` for ingestion, so a store shared between
//! sessions goes behind an `RwLock`: many readers, one writer.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{MainCategory, TaxonomyPath};
use crate::util::fnv1a64;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid incident record `{id}`: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("storage error: {0}")]
    Storage(String),
    #[error("no labelled incidents in category `{0}`")]
    EmptyCategory(String),
}

impl From<std::io::Error> for CorpusError {
    fn from(e: std::io::Error) -> Self {
        CorpusError::Storage(e.to_string())
    }
}

/// One historical or incoming incident ticket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentRecord {
    pub id: String,
    pub description: String,
    #[serde(default)]
    pub summary: Option<String>,
    #[serde(default)]
    pub oce_discussion: Option<String>,
    /// Ground-truth label when known.
    #[serde(default)]
    pub root_cause: Option<TaxonomyPath>,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub resolved_at: Option<DateTime<Utc>>,
    /// Unit-norm vector; persisted in the sidecar file, not in JSONL.
    #[serde(default, skip_serializing)]
    pub embedding: Option<Vec<f64>>,
}

impl IncidentRecord {
    pub fn new(id: impl Into<String>, description: impl Into<String>, created_at: DateTime<Utc>) -> Self {
        IncidentRecord {
            id: id.into(),
            description: description.into(),
            summary: None,
            oce_discussion: None,
            root_cause: None,
            created_at,
            resolved_at: None,
            embedding: None,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |reason: &str| CorpusError::InvalidRecord {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.trim().is_empty() {
            return Err(bad("empty id"));
        }
        if self.description.trim().is_empty() {
            return Err(bad("empty description"));
        }
        if matches!(self.resolved_at, Some(r) if r < self.created_at) {
            return Err(bad("resolved_at precedes created_at"));
        }
        Ok(())
    }

    /// Time to mitigate in hours, when resolved.
    pub fn ttm_hours(&self) -> Option<f64> {
        self.resolved_at
            .map(|r| (r - self.created_at).num_milliseconds() as f64 / 3_600_000.0)
    }

    /// Text used for embedding: the summary when present.
    pub fn retrieval_text(&self) -> &str {
        self.summary.as_deref().unwrap_or(&self.description)
    }
}

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

/// Deterministic text → unit vector mapping.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Signed feature hashing over lowercase alphanumeric tokens.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    dimension: usize,
}

impl HashingEmbedder {
    pub const DEFAULT_DIMENSION: usize = 256;

    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        HashingEmbedder { dimension }
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder::new(Self::DEFAULT_DIMENSION)
    }
}

/// Lowercased alphanumeric runs of `text`.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl EmbeddingProvider for HashingEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        for token in tokenize(text) {
            let bucket = (fnv1a64(0, token.as_bytes()) % self.dimension as u64) as usize;
            let sign = if fnv1a64(1, token.as_bytes()) & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        normalize(&mut v);
        v
    }
}

/// Scales `v` to unit norm. A zero vector becomes the first basis vector so
/// that every embedding is a valid unit vector.
pub fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        if let Some(first) = v.first_mut() {
            *first = 1.0;
        }
        return;
    }
    v.iter_mut().for_each(|x| *x /= norm);
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The `k` best-scoring items by descending score, ties broken by ascending
/// key.
pub fn top_k<'a, T>(scored: impl IntoIterator<Item = (&'a str, f64, T)>, k: usize) -> Vec<(f64, T)> {
    let mut all: Vec<(&str, f64, T)> = scored.into_iter().collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    all.truncate(k);
    all.into_iter().map(|(_, s, t)| (s, t)).collect()
}

// ---------------------------------------------------------------------------
// Store
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalHit {
    pub record: IncidentRecord,
    pub similarity: f64,
    /// 1-based position assigned by the reranker.
    pub rerank_position: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct IncidentStore {
    records: Vec<IncidentRecord>,
    by_id: HashMap<String, usize>,
}

impl IncidentStore {
    pub fn new() -> Self {
        IncidentStore::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[IncidentRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&IncidentRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    /// Embeds and stores `record`, replacing any record with the same id.
    pub fn ingest(&mut self, mut record: IncidentRecord, provider: &dyn EmbeddingProvider) -> Result<String, CorpusError> {
        record.validate()?;
        record.embedding = Some(provider.embed(record.retrieval_text()));
        let id = record.id.clone();
        match self.by_id.get(&id) {
            Some(&i) => self.records[i] = record,
            None => {
                self.by_id.insert(id.clone(), self.records.len());
                self.records.push(record);
            }
        }
        Ok(id)
    }

    /// Top-`k` records by cosine similarity to `query`.
    pub fn retrieve_similar(&self, query: &str, k: usize, provider: &dyn EmbeddingProvider) -> Vec<RetrievalHit> {
        self.retrieve_similar_where(query, k, provider, |_| true)
    }

    /// As [`retrieve_similar`](Self::retrieve_similar) over records accepted
    /// by `filter`.
    pub fn retrieve_similar_where(
        &self,
        query: &str,
        k: usize,
        provider: &dyn EmbeddingProvider,
        filter: impl Fn(&IncidentRecord) -> bool,
    ) -> Vec<RetrievalHit> {
        assert!(k >= 1, "k must be positive");
        let q = provider.embed(query);
        let scored = self.records.iter().filter(|r| filter(r)).map(|r| {
            let sim = r.embedding.as_deref().map(|e| dot(&q, e)).unwrap_or(0.0);
            (r.id.as_str(), sim, r)
        });
        top_k(scored, k)
            .into_iter()
            .map(|(similarity, r)| RetrievalHit {
                record: r.clone(),
                similarity,
                rerank_position: None,
            })
            .collect()
    }

    /// Incidents per distinct leaf label within a main category.
    pub fn recurrence_rate(&self, category: &str) -> Result<f64, CorpusError> {
        let wanted = MainCategory::from_alias(category)
            .map(|c| c.label().to_string())
            .unwrap_or_else(|| category.to_string());
        let mut count = 0usize;
        let mut distinct = BTreeSet::new();
        for r in &self.records {
            if let Some(label) = &r.root_cause {
                if label.main_category() == wanted {
                    count += 1;
                    distinct.insert(label.to_string());
                }
            }
        }
        if count == 0 {
            return Err(CorpusError::EmptyCategory(wanted));
        }
        Ok(count as f64 / distinct.len() as f64)
    }

    // -----------------------------------------------------------------------
    // Persistence
    // -----------------------------------------------------------------------

    /// Writes the JSONL file and the vector sidecar.
    pub fn save(&self, jsonl: &Path, vectors: &Path) -> Result<(), CorpusError> {
        let mut lines = BufWriter::new(fs::File::create(jsonl)?);
        let mut vecs = BufWriter::new(fs::File::create(vectors)?);
        for r in &self.records {
            let line = serde_json::to_string(r).map_err(|e| CorpusError::Storage(e.to_string()))?;
            writeln!(lines, "{line}")?;
            let e = r.embedding.as_deref().ok_or_else(|| CorpusError::Storage(format!("record `{}` has no embedding", r.id)))?;
            for x in e {
                vecs.write_all(&(*x as f32).to_le_bytes())?;
            }
        }
        lines.flush()?;
        vecs.flush()?;
        Ok(())
    }

    /// Loads a store saved by [`save`](Self::save). Vectors are renormalized
    /// after widening from `f32`.
    pub fn load(jsonl: &Path, vectors: &Path, dimension: usize) -> Result<IncidentStore, CorpusError> {
        let records = read_jsonl(jsonl)?;
        let bytes = fs::read(vectors)?;
        let expected = records.len() * dimension * 4;
        if bytes.len() != expected {
            return Err(CorpusError::Storage(format!(
                "vector sidecar holds {} bytes, expected {expected} for {} records of dimension {dimension}",
                bytes.len(),
                records.len()
            )));
        }
        let mut store = IncidentStore::new();
        for (i, mut r) in records.into_iter().enumerate() {
            r.validate()?;
            let start = i * dimension * 4;
            let mut v: Vec<f64> = bytes[start..start + dimension * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            normalize(&mut v);
            r.embedding = Some(v);
            store.by_id.insert(r.id.clone(), store.records.len());
            store.records.push(r);
        }
        Ok(store)
    }

    /// Builds a store from a JSONL file, computing embeddings.
    pub fn from_jsonl(jsonl: &Path, provider: &dyn EmbeddingProvider) -> Result<IncidentStore, CorpusError> {
        let mut store = IncidentStore::new();
        for r in read_jsonl(jsonl)? {
            store.ingest(r, provider)?;
        }
        Ok(store)
    }
}

/// Reads one `IncidentRecord` per non-empty line.
pub fn read_jsonl(path: &Path) -> Result<Vec<IncidentRecord>, CorpusError> {
    let reader = BufReader::new(fs::File::open(path).map_err(|e| CorpusError::Storage(format!("{}: {e}", path.display())))?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: IncidentRecord = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Storage(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(r);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, records: &[IncidentRecord]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r).map_err(|e| CorpusError::Storage(e.to_string()))?)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Description clustering
// ---------------------------------------------------------------------------

/// Number of distinct descriptions under greedy single-pass clustering.
///
/// Records are scanned in id order; each joins the first cluster whose
/// centroid has cosine similarity ≥ `threshold` with it, or founds a new one.
pub fn distinct_description_clusters(records: &[IncidentRecord], provider: &dyn EmbeddingProvider, threshold: f64) -> usize {
    let mut ordered: Vec<&IncidentRecord> = records.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let vectors: Vec<Vec<f64>> = ordered
        .iter()
        .map(|r| r.embedding.clone().unwrap_or_else(|| provider.embed(r.retrieval_text())))
        .collect();
    cluster_vectors(&vectors, threshold)
}

/// Greedy centroid clustering over unit vectors, in the given order.
pub fn cluster_vectors(vectors: &[Vec<f64>], threshold: f64) -> usize {
    // Each cluster keeps the running sum of its members; the centroid
    // direction is the normalized sum.
    let mut sums: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let joined = sums.iter_mut().find(|sum| {
            let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
            norm > 0.0 && dot(sum, v) / norm >= threshold
        });
        match joined {
            Some(sum) => sum.iter_mut().zip(v).for_each(|(s, x)| *s += x),
            None => sums.push(v.clone()),
        }
    }
    sums.len()
}
