//! Generative caching for LLM requests: cluster structurally similar
//! prompts, synthesize a small program per cluster that reproduces the
//! model's responses, and serve later prompts from that program.

pub mod clustering;
pub mod codegen;
pub mod embeddings;
pub mod program;
pub mod prompt;
pub mod runtime;
pub mod store;

pub use clustering::{Cluster, ClusterId, ClusterStore, ClusterThresholds};
pub use codegen::{ChatMessage, CodegenConfig, CodegenMode, LlmBackend, LlmError};
pub use embeddings::{Embedder, EmbedderConfig, Embedding, HashedEmbedder};
pub use program::{CompiledProgram, ExecLimits, ExecResult, ProgramSource};
pub use prompt::{Exemplar, PromptRecord, ResponseDoc};
pub use runtime::{RequestOutcome, Runtime, RuntimeConfig, RuntimeError, ServedFrom};
pub use store::{CacheStore, CacheStoreConfig};
