//! Text embeddings and cosine similarity.
//!
//! Two providers sit behind the [`Embedder`] trait: a deterministic hashed
//! bag-of-tokens embedder that needs no model download, and a remote
//! provider that speaks a small embed-over-HTTP protocol:
//!
//! ```text
//! POST {endpoint}/embed   {"texts": ["...", ...]}
//!                      -> {"vectors": [[f64; dims], ...]}
//! ```

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::ResponseDoc;

pub const DEFAULT_DIMS: usize = 384;
pub const MIN_DIMS: usize = 8;

#[derive(Debug, Error)]
pub enum EmbedError {
    /// The remote provider could not be reached. Callers may retry.
    #[error("embedding transport error: {0}")]
    Transport(String),
    #[error("embedding provider returned a malformed reply: {0}")]
    Protocol(String),
    #[error("invalid embedder config: {0}")]
    Config(String),
}

impl EmbedError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, EmbedError::Transport(_))
    }
}

/// A fixed-dimension vector. Embedder output is either all-zero or unit norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn zeros(dims: usize) -> Self {
        Self {
            values: vec![0.0; dims],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Scales to unit L2 norm. The zero vector stays zero.
    pub fn normalized(mut self) -> Self {
        let norm = self.norm();
        if norm > 0.0 {
            for v in &mut self.values {
                *v /= norm;
            }
        }
        self
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Cosine similarity in `[-1, 1]`; zero when either side is the zero vector.
///
/// Panics if the dimensions differ.
pub fn cosine(a: &Embedding, b: &Embedding) -> f64 {
    assert_eq!(
        a.dims(),
        b.dims(),
        "cosine of embeddings with different dimensions"
    );
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    HashedLocal,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dims: usize,
    pub endpoint: Option<String>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::HashedLocal,
            dims: DEFAULT_DIMS,
            endpoint: None,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dims < MIN_DIMS {
            return Err(EmbedError::Config(format!(
                "dims must be at least {MIN_DIMS}, got {}",
                self.dims
            )));
        }
        if self.kind == EmbedderKind::Remote && self.endpoint.is_none() {
            return Err(EmbedError::Config(
                "remote embedder requires an endpoint".into(),
            ));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn Embedder>, EmbedError> {
        self.validate()?;
        Ok(match self.kind {
            EmbedderKind::HashedLocal => Box::new(HashedEmbedder::new(self.dims)),
            EmbedderKind::Remote => Box::new(RemoteEmbedder::new(
                self.endpoint.clone().unwrap_or_default(),
                self.dims,
            )?),
        })
    }
}

pub trait Embedder: Send + Sync {
    fn dims(&self) -> usize;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError>;

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        let mut out = self.embed_batch(&[text])?;
        out.pop()
            .ok_or_else(|| EmbedError::Protocol("empty reply for one text".into()))
    }
}

/// One embedding per response value, in document order. Plain text yields one.
pub fn embed_response_values(
    embedder: &dyn Embedder,
    response: &ResponseDoc,
) -> Result<Vec<Embedding>, EmbedError> {
    match response {
        ResponseDoc::Structured(entries) => {
            if entries.is_empty() {
                return Ok(Vec::new());
            }
            let texts: Vec<&str> = entries.iter().map(|(_, v)| v.as_str()).collect();
            embedder.embed_batch(&texts)
        }
        ResponseDoc::Plain(text) => Ok(vec![embedder.embed(text)?]),
    }
}

/// Deterministic bag-of-tokens embedder.
///
/// Text is lowercased and split on runs of non-alphanumeric characters; each
/// token adds one at `fnv1a64(token) mod dims`, then the vector is normalized.
#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    dims: usize,
}

impl HashedEmbedder {
    pub fn new(dims: usize) -> Self {
        assert!(dims > 0, "embedding dims must be positive");
        Self { dims }
    }

    pub fn embed_text(&self, text: &str) -> Embedding {
        let mut values = vec![0.0; self.dims];
        for token in tokenize(text) {
            let slot = (fnv1a64(token.as_bytes()) % self.dims as u64) as usize;
            values[slot] += 1.0;
        }
        Embedding::from_values(values).normalized()
    }
}

impl Embedder for HashedEmbedder {
    fn dims(&self) -> usize {
        self.dims
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        Ok(self.embed_text(text))
    }
}

fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(PRIME))
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedReply {
    vectors: Vec<Vec<f64>>,
}

pub struct RemoteEmbedder {
    url: String,
    dims: usize,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(endpoint: String, dims: usize) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| EmbedError::Config(e.to_string()))?;
        Ok(Self {
            url: format!("{}/embed", endpoint.trim_end_matches('/')),
            dims,
            client,
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn dims(&self) -> usize {
        self.dims
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        let reply = self
            .client
            .post(&self.url)
            .json(&EmbedRequest { texts })
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        let body: EmbedReply = reply
            .json()
            .map_err(|e| EmbedError::Protocol(e.to_string()))?;
        if body.vectors.len() != texts.len() {
            return Err(EmbedError::Protocol(format!(
                "expected {} vectors, got {}",
                texts.len(),
                body.vectors.len()
            )));
        }
        body.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dims {
                    Err(EmbedError::Protocol(format!(
                        "expected {} dims, got {}",
                        self.dims,
                        v.len()
                    )))
                } else {
                    Ok(Embedding::from_values(v).normalized())
                }
            })
            .collect()
    }
}
