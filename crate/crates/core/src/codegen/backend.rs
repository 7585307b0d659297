//! Chat-completion backends.
//!
//! Remote wire protocol:
//!
//! ```text
//! POST {endpoint}/chat  {"model": "...", "messages": [{"role": "user", "content": "..."}]}
//!                    -> {"text": "...", "usage": {"input_tokens": 12, "output_tokens": 34}}
//! ```

use std::collections::VecDeque;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::estimate_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Completion {
    /// A completion with heuristic token counts.
    pub fn estimated(messages: &[ChatMessage], text: String) -> Self {
        Self {
            input_tokens: messages.iter().map(|m| estimate_tokens(&m.content)).sum(),
            output_tokens: estimate_tokens(&text),
            text,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LlmError {
    #[error("llm transport error: {0}")]
    Transport(String),
    #[error("llm protocol error: {0}")]
    Protocol(String),
    #[error("scripted backend has no replies left")]
    Exhausted,
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, LlmError>;
}

impl<T: LlmBackend + ?Sized> LlmBackend for std::sync::Arc<T> {
    fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, LlmError> {
        (**self).complete(messages)
    }
}

/// Replays canned replies in order; errors once they run out.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    replies: Mutex<VecDeque<String>>,
    calls: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ScriptedBackend {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self {
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Every message list received so far.
    pub fn calls(&self) -> Vec<Vec<ChatMessage>> {
        self.calls.lock().clone()
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().len()
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, LlmError> {
        self.calls.lock().push(messages.to_vec());
        let reply = self.replies.lock().pop_front().ok_or(LlmError::Exhausted)?;
        Ok(Completion::estimated(messages, reply))
    }
}

/// Adapts a closure into a backend with heuristic token counts.
pub struct FnBackend<F>(pub F);

impl<F> LlmBackend for FnBackend<F>
where
    F: Fn(&[ChatMessage]) -> Result<String, LlmError> + Send + Sync,
{
    fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, LlmError> {
        let text = (self.0)(messages)?;
        Ok(Completion::estimated(messages, text))
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    messages: &'a [ChatMessage],
}

#[derive(Deserialize)]
struct ChatReply {
    text: String,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatUsage {
    input_tokens: u64,
    output_tokens: u64,
}

/// Backend speaking the `/chat` wire protocol.
pub struct RemoteLlm {
    url: String,
    model: Option<String>,
    client: reqwest::blocking::Client,
}

impl RemoteLlm {
    pub fn new(endpoint: &str, model: Option<String>, timeout: Duration) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            url: format!("{}/chat", endpoint.trim_end_matches('/')),
            model,
            client,
        })
    }
}

impl LlmBackend for RemoteLlm {
    fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, LlmError> {
        let reply = self
            .client
            .post(&self.url)
            .json(&ChatRequest {
                model: self.model.as_deref(),
                messages,
            })
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let body: ChatReply = reply
            .json()
            .map_err(|e| LlmError::Protocol(e.to_string()))?;
        Ok(match body.usage {
            Some(u) => Completion {
                text: body.text,
                input_tokens: u.input_tokens,
                output_tokens: u.output_tokens,
            },
            None => Completion::estimated(messages, body.text),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_replies_in_order_then_exhausts() {
        let b = ScriptedBackend::new(["first"]);
        let msgs = [ChatMessage::user("12345678")];
        let c = b.complete(&msgs).unwrap();
        assert_eq!(c.text, "first");
        assert_eq!(c.input_tokens, 2);
        assert_eq!(c.output_tokens, 2);
        assert_eq!(b.complete(&msgs), Err(LlmError::Exhausted));
        assert_eq!(b.calls().len(), 2);
    }

    #[test]
    fn token_counts_round_up() {
        let c = Completion::estimated(&[ChatMessage::user("abcde")], "abc".into());
        assert_eq!((c.input_tokens, c.output_tokens), (2, 1));
    }

    #[test]
    fn unreachable_remote_is_a_transport_error() {
        let b = RemoteLlm::new("http://127.0.0.1:9", None, Duration::from_secs(2)).unwrap();
        assert!(matches!(
            b.complete(&[ChatMessage::user("hi")]),
            Err(LlmError::Transport(_))
        ));
    }
}
