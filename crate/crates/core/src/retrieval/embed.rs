use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DIM: usize = 256;

/// L2-normalised embedding. The all-zero vector stands for empty text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector {
            values: vec![0.0; dim],
        }
    }

    /// Normalises `raw`; a zero input stays zero.
    pub fn normalized(mut raw: Vec<f64>) -> Self {
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in raw.iter_mut() {
                *v /= norm;
            }
        }
        EmbeddingVector { values: raw }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Cosine similarity; both sides are unit length (or zero).
    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("embedder unavailable: {0}")]
    Unavailable(String),
    #[error("embedding dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

pub trait Embedder: Send + Sync {
    /// Stable identifier recorded with each index.
    fn id(&self) -> String;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

/// Hashed character-trigram term frequencies.
#[derive(Debug, Clone)]
pub struct TrigramEmbedder {
    dim: usize,
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        TrigramEmbedder { dim: DEFAULT_DIM }
    }
}

impl TrigramEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        TrigramEmbedder { dim }
    }

    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        let chars: Vec<char> = text.to_lowercase().chars().collect();
        let mut tf = vec![0.0; self.dim];
        if chars.is_empty() {
            return EmbeddingVector::zeros(self.dim);
        }
        if chars.len() < 3 {
            let gram: String = chars.iter().collect();
            tf[bucket(&gram, self.dim)] += 1.0;
        } else {
            for w in chars.windows(3) {
                let gram: String = w.iter().collect();
                tf[bucket(&gram, self.dim)] += 1.0;
            }
        }
        EmbeddingVector::normalized(tf)
    }
}

/// FNV-1a over the UTF-8 bytes.
fn bucket(gram: &str, dim: usize) -> usize {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in gram.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    (h % dim as u64) as usize
}

impl Embedder for TrigramEmbedder {
    fn id(&self) -> String {
        format!("trigram-fnv-{}", self.dim)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(self.embed_text(text))
    }
}

/// Client for `POST {"input": str} -> {"embedding": [f64...]}`.
pub struct RemoteEmbedder {
    url: String,
    token: Option<String>,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct RemoteResponse {
    embedding: Vec<f64>,
}

impl RemoteEmbedder {
    pub fn new(url: impl Into<String>, token: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteEmbedder {
            url: url.into(),
            token,
            agent,
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote:{}", self.url)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut req = self.agent.post(&self.url);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req
            .send_json(serde_json::json!({ "input": text }))
            .map_err(|e| EmbedError::Unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(EmbedError::Unavailable(format!("HTTP {}", resp.status().as_u16())));
        }
        let body: RemoteResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::Unavailable(format!("bad response: {e}")))?;
        if body.embedding.is_empty() {
            return Err(EmbedError::Unavailable("empty embedding".into()));
        }
        Ok(EmbeddingVector::normalized(body.embedding))
    }
}

/// Embeds with the given embedder.
pub fn embed(text: &str, embedder: &dyn Embedder) -> Result<EmbeddingVector, EmbedError> {
    embedder.embed(text)
}
