//! Prompts, responses and exemplars.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::embeddings::{embed_response_values, EmbedError, Embedder, Embedding};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    /// The complete constructed prompt, system and user parts together.
    pub full_text: String,
    /// The variable user-instruction segment.
    pub user_text: String,
    pub received_at_ms: u64,
}

impl PromptRecord {
    /// A record with a fresh id where the user text is the whole prompt.
    pub fn new(full_text: impl Into<String>) -> Self {
        let full_text = full_text.into();
        Self::with_parts(new_request_id(), full_text.clone(), full_text)
    }

    pub fn with_parts(
        id: impl Into<String>,
        full_text: impl Into<String>,
        user_text: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            full_text: full_text.into(),
            user_text: user_text.into(),
            received_at_ms: now_ms(),
        }
    }
}

pub fn new_request_id() -> String {
    uuid::Uuid::new_v4().to_string()
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Shape a response is expected to have, used by sanity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseShape {
    Plain,
    Structured { arity: usize },
}

/// A response as either a flat key-value document or plain text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResponseDoc {
    Structured(Vec<(String, String)>),
    Plain(String),
}

impl ResponseDoc {
    /// Parses wire text. Anything that is not a flat key-value document with
    /// scalar values becomes plain text; this never fails.
    pub fn parse(text: &str) -> Self {
        let Ok(Value::Object(map)) = serde_json::from_str::<Value>(text) else {
            return ResponseDoc::Plain(text.to_string());
        };
        let mut entries = Vec::with_capacity(map.len());
        for (key, value) in map {
            let value = match value {
                Value::String(s) => s,
                Value::Bool(b) => b.to_string(),
                Value::Null => "null".to_string(),
                Value::Number(n) => canonical_number(&n),
                Value::Array(_) | Value::Object(_) => {
                    return ResponseDoc::Plain(text.to_string());
                }
            };
            entries.push((key, value));
        }
        ResponseDoc::Structured(entries)
    }

    /// Canonical wire form: compact key-value document, or the plain text verbatim.
    pub fn to_wire(&self) -> String {
        match self {
            ResponseDoc::Structured(entries) => {
                let map: serde_json::Map<String, Value> = entries
                    .iter()
                    .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                    .collect();
                Value::Object(map).to_string()
            }
            ResponseDoc::Plain(text) => text.clone(),
        }
    }

    /// Number of values: entry count for documents, one for plain text.
    pub fn value_count(&self) -> usize {
        match self {
            ResponseDoc::Structured(entries) => entries.len(),
            ResponseDoc::Plain(_) => 1,
        }
    }

    pub fn shape(&self) -> ResponseShape {
        match self {
            ResponseDoc::Structured(entries) => ResponseShape::Structured {
                arity: entries.len(),
            },
            ResponseDoc::Plain(_) => ResponseShape::Plain,
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        match self {
            ResponseDoc::Structured(entries) => entries
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str()),
            ResponseDoc::Plain(_) => None,
        }
    }
}

fn canonical_number(n: &serde_json::Number) -> String {
    if let Some(i) = n.as_i64() {
        i.to_string()
    } else if let Some(u) = n.as_u64() {
        u.to_string()
    } else {
        // f64 Display never uses exponent notation
        n.as_f64().map(|f| f.to_string()).unwrap_or_default()
    }
}

/// A stored (prompt, response) pair with its embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub prompt: PromptRecord,
    pub response: ResponseDoc,
    pub prompt_embedding: Embedding,
    pub response_embeddings: Vec<Embedding>,
}

impl Exemplar {
    pub fn embed(
        embedder: &dyn Embedder,
        prompt: PromptRecord,
        response: ResponseDoc,
    ) -> Result<Self, EmbedError> {
        let prompt_embedding = embedder.embed(&prompt.full_text)?;
        Self::with_prompt_embedding(embedder, prompt, response, prompt_embedding)
    }

    pub fn with_prompt_embedding(
        embedder: &dyn Embedder,
        prompt: PromptRecord,
        response: ResponseDoc,
        prompt_embedding: Embedding,
    ) -> Result<Self, EmbedError> {
        let response_embeddings = embed_response_values(embedder, &response)?;
        Ok(Self {
            prompt,
            response,
            prompt_embedding,
            response_embeddings,
        })
    }

    pub fn response_arity(&self) -> usize {
        self.response_embeddings.len()
    }
}
