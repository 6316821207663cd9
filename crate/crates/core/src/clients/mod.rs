//! Pluggable description-generation and text-embedding clients: HTTP-backed
//! implementations speaking the common chat-completions / embeddings JSON
//! shapes, and deterministic offline mocks so the whole pipeline can run
//! without network access.

mod batch;
mod cache;
mod http;
mod mock;
mod store;

pub use batch::run_batch;
pub use cache::{file_sha256, DiskCache};
pub use http::{ChatClient, EmbedClient};
pub use mock::{mock_embed, mock_generate, tokenize};
pub use store::{
    read_descriptions_jsonl, read_embeddings, read_prompts_jsonl, write_descriptions_jsonl,
    write_embeddings, write_prompts_jsonl, EmbeddingsFile, PromptRecord,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A generated natural-language description of one client's behavior.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Description {
    pub client_id: String,
    pub text: String,
}

impl Description {
    pub fn new(client_id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Content("empty description text".into()));
        }
        Ok(Description {
            client_id: client_id.into(),
            text,
        })
    }
}

/// A frozen text embedding for one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEmbedding {
    pub client_id: String,
    pub vector: Vec<f64>,
}

/// Connection settings for a hosted generation or embedding endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_parallel: usize,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: String,
    /// Base backoff delay; doubles per retry.
    pub backoff_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://localhost:8000/v1".into(),
            model: "default".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            max_parallel: 4,
            auth_env: "LATTE_API_TOKEN".into(),
            backoff_ms: 1000,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_parallel < 1 {
            return Err(Error::config("endpoint.max_parallel", "must be >= 1"));
        }
        if self.timeout_secs <= 0.0 {
            return Err(Error::config("endpoint.timeout_secs", "must be > 0"));
        }
        Ok(())
    }
}
