//! Reference caches that return stored responses verbatim.

use std::collections::HashMap;

use gencache_core::embeddings::{cosine, Embedding};
use sha2::{Digest, Sha256};

/// Hit iff a byte-identical prompt was seen before.
#[derive(Debug, Default)]
pub struct ExactCache {
    entries: HashMap<[u8; 32], String>,
}

impl ExactCache {
    fn key(prompt: &str) -> [u8; 32] {
        Sha256::digest(prompt.as_bytes()).into()
    }

    pub fn lookup(&self, prompt: &str) -> Option<&str> {
        self.entries.get(&Self::key(prompt)).map(String::as_str)
    }

    pub fn insert(&mut self, prompt: &str, response: String) {
        self.entries.insert(Self::key(prompt), response);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Hit iff some stored prompt embedding is more similar than `threshold`;
/// the most similar entry's response is returned.
#[derive(Debug)]
pub struct SemanticCache {
    threshold: f64,
    entries: Vec<(Embedding, String)>,
}

impl SemanticCache {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            entries: Vec::new(),
        }
    }

    pub fn lookup(&self, embedding: &Embedding) -> Option<&str> {
        let mut best: Option<(f64, &str)> = None;
        for (e, response) in &self.entries {
            let s = cosine(embedding, e);
            if s > self.threshold && best.is_none_or(|(b, _)| s > b) {
                best = Some((s, response));
            }
        }
        best.map(|(_, r)| r)
    }

    pub fn insert(&mut self, embedding: Embedding, response: String) {
        self.entries.push((embedding, response));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
