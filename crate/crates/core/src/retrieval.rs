//! Document chunking, text embedding and cosine top-k retrieval.
//!
//! Chunk boundaries are counted in Unicode scalar values. The reference
//! embedder hashes character trigrams into a fixed number of bins; a remote
//! embedder speaking the common `/embeddings` JSON protocol can replace it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHUNK_SIZE: usize = 500;
pub const CHUNK_OVERLAP: usize = 50;
pub const EMBEDDING_DIM: usize = 256;
pub const K_START: usize = 10;
pub const K_STEP: usize = 10;
pub const K_MAX: usize = 50;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("overlap {overlap} must be smaller than chunk size {size}")]
    BadOverlap { size: usize, overlap: usize },
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("retrieval unavailable: {0}")]
    Unavailable(String),
    #[error("failed to read knowledge base: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub components: Vec<f64>,
}

impl EmbeddingVector {
    pub fn zero(dim: usize) -> Self {
        EmbeddingVector { components: vec![0.0; dim] }
    }

    /// L2-normalizes `raw`; an all-zero input stays zero.
    pub fn normalized(mut raw: Vec<f64>) -> Self {
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            raw.iter_mut().for_each(|x| *x /= norm);
        }
        EmbeddingVector { components: raw }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn norm(&self) -> f64 {
        self.components.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|x| *x == 0.0)
    }
}

/// Inner product of two normalized vectors, clamped to [-1, 1]. Zero vectors
/// have similarity 0 with everything.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, RetrievalError> {
    if a.dim() != b.dim() {
        return Err(RetrievalError::DimensionMismatch(a.dim(), b.dim()));
    }
    if a.is_zero() || b.is_zero() {
        return Ok(0.0);
    }
    let dot: f64 = a.components.iter().zip(&b.components).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

pub trait Embedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError>;

    fn dim(&self) -> usize;
}

/// Deterministic feature hashing of lowercase character trigrams.
#[derive(Debug, Clone)]
pub struct TrigramEmbedder {
    dim: usize,
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        TrigramEmbedder { dim: EMBEDDING_DIM }
    }
}

impl TrigramEmbedder {
    pub fn with_dim(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        TrigramEmbedder { dim }
    }
}

/// 64-bit FNV-1a.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Embedder for TrigramEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        let chars: Vec<char> = text.to_lowercase().chars().collect();
        let mut bins = vec![0.0; self.dim];
        if chars.is_empty() {
            return Ok(EmbeddingVector { components: bins });
        }
        let grams: Vec<&[char]> = if chars.len() < 3 { vec![&chars[..]] } else { chars.windows(3).collect() };
        let mut buf = String::new();
        for g in grams {
            buf.clear();
            buf.extend(g);
            bins[(fnv1a(buf.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        Ok(EmbeddingVector::normalized(bins))
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// Client for an OpenAI-compatible `/embeddings` endpoint.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub dim: usize,
}

pub const DEFAULT_REMOTE_EMBED_MODEL: &str = "text-embedding-3-small";

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl RemoteEmbedder {
    /// Reads `RAPP_EMBED_BASE_URL`, `RAPP_EMBED_MODEL` and `RAPP_EMBED_API_KEY`.
    pub fn from_env(dim: usize) -> Option<Self> {
        let base_url = std::env::var("RAPP_EMBED_BASE_URL").ok()?;
        Some(RemoteEmbedder {
            base_url,
            model: std::env::var("RAPP_EMBED_MODEL").unwrap_or_else(|_| DEFAULT_REMOTE_EMBED_MODEL.to_string()),
            api_key: std::env::var("RAPP_EMBED_API_KEY").ok(),
            dim,
        })
    }

    fn url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/embeddings") {
            base.to_string()
        } else {
            format!("{base}/embeddings")
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        if text.is_empty() {
            return Ok(EmbeddingVector::zero(self.dim));
        }
        let mut req = ureq::post(&self.url());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(EmbeddingRequest { model: &self.model, input: text })
            .map_err(|e| RetrievalError::Unavailable(e.to_string()))?;
        let body: EmbeddingResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| RetrievalError::Unavailable(e.to_string()))?;
        let v = body
            .data
            .into_iter()
            .next()
            .ok_or_else(|| RetrievalError::Unavailable("response carried no embedding".into()))?
            .embedding;
        if v.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch(v.len(), self.dim));
        }
        Ok(EmbeddingVector::normalized(v))
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocChunk {
    pub doc_id: String,
    /// Character offsets, end exclusive.
    pub span: (usize, usize),
    pub text: String,
    pub vector: EmbeddingVector,
}

/// Character spans of `len`-character text cut into `size`-wide windows
/// advancing by `size - overlap`.
pub fn chunk_spans(len: usize, size: usize, overlap: usize) -> Result<Vec<(usize, usize)>, RetrievalError> {
    if overlap >= size {
        return Err(RetrievalError::BadOverlap { size, overlap });
    }
    let stride = size - overlap;
    let mut spans = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + size).min(len);
        spans.push((start, end));
        if end == len {
            break;
        }
        start += stride;
    }
    Ok(spans)
}

/// Splits `text` into overlapping chunks (text only, not yet embedded).
pub fn chunk_document(text: &str, size: usize, overlap: usize) -> Result<Vec<((usize, usize), String)>, RetrievalError> {
    let chars: Vec<char> = text.chars().collect();
    Ok(chunk_spans(chars.len(), size, overlap)?
        .into_iter()
        .map(|(s, e)| ((s, e), chars[s..e].iter().collect()))
        .collect())
}

/// Retrieval size for a 1-based iteration: 10, 20, ... capped at 50.
pub fn k_schedule(iteration: usize) -> usize {
    assert!(iteration >= 1, "iterations are 1-based");
    (K_START + K_STEP * (iteration - 1)).min(K_MAX)
}

/// In-memory vector store of embedded chunks.
#[derive(Debug, Clone, Default)]
pub struct DocStore {
    chunks: Vec<DocChunk>,
}

impl DocStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_document(&mut self, doc_id: &str, text: &str, embedder: &dyn Embedder) -> Result<(), RetrievalError> {
        for (span, chunk) in chunk_document(text, CHUNK_SIZE, CHUNK_OVERLAP)? {
            let vector = embedder.embed(&chunk)?;
            self.chunks.push(DocChunk { doc_id: doc_id.to_string(), span, text: chunk, vector });
        }
        Ok(())
    }

    /// Loads every `.md` and `.txt` file directly under `dir`, in file-name
    /// order. The document id is the file name.
    pub fn from_dir(dir: &Path, embedder: &dyn Embedder) -> Result<Self, RetrievalError> {
        let mut files: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("md" | "txt")))
            .collect();
        files.sort();
        let mut store = DocStore::new();
        for f in files {
            let text = std::fs::read_to_string(&f)?;
            let id = f.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            store.add_document(&id, &text, embedder)?;
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunks(&self) -> &[DocChunk] {
        &self.chunks
    }

    /// Top `k` chunks by cosine similarity to `query_text`, ties broken by
    /// (doc_id, span start).
    pub fn top_k(&self, query_text: &str, k: usize, embedder: &dyn Embedder) -> Result<Vec<&DocChunk>, RetrievalError> {
        let q = embedder.embed(query_text)?;
        let mut scored = self
            .chunks
            .iter()
            .map(|c| cosine(&q, &c.vector).map(|s| (s, c)))
            .collect::<Result<Vec<_>, _>>()?;
        scored.sort_by(|(sa, a), (sb, b)| {
            sb.total_cmp(sa)
                .then_with(|| a.doc_id.cmp(&b.doc_id))
                .then_with(|| a.span.0.cmp(&b.span.0))
        });
        Ok(scored.into_iter().take(k).map(|(_, c)| c).collect())
    }

    /// Ranked chunks for the given 1-based iteration.
    pub fn query(&self, query_text: &str, iteration: usize, embedder: &dyn Embedder) -> Result<Vec<&DocChunk>, RetrievalError> {
        self.top_k(query_text, k_schedule(iteration), embedder)
    }
}
