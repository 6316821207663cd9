//! HTTP clients for hosted generation and embedding endpoints, speaking the
//! widely deployed chat-completions / embeddings JSON shapes. Transient
//! failures (5xx, timeouts) retry with exponential backoff; 4xx responses
//! fail immediately as configuration errors.

use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::clients::{Description, EndpointConfig, TextEmbedding};
use crate::error::{Error, Result};
use crate::summarizer::split_prompt;

fn build_http(cfg: &EndpointConfig) -> Result<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs_f64(cfg.timeout_secs))
        .build()
        .map_err(|e| Error::Transport {
            attempts: 0,
            message: format!("failed to build http client: {e}"),
        })
}

fn auth_token(cfg: &EndpointConfig) -> Option<String> {
    std::env::var(&cfg.auth_env).ok().filter(|t| !t.is_empty())
}

/// POSTs `body`, retrying on 5xx and transport errors with exponential
/// backoff (base `backoff_ms`, factor 2) up to `max_retries` retries.
fn post_with_retry(
    http: &reqwest::blocking::Client,
    cfg: &EndpointConfig,
    url: &str,
    body: &serde_json::Value,
) -> Result<serde_json::Value> {
    let mut attempts = 0u32;
    loop {
        attempts += 1;
        let mut req = http.post(url).json(body);
        if let Some(token) = auth_token(cfg) {
            req = req.bearer_auth(token);
        }
        let failure = match req.send() {
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    return resp.json().map_err(|e| Error::Content(e.to_string()));
                }
                let message = resp.text().unwrap_or_default();
                if status.is_client_error() {
                    return Err(Error::Endpoint {
                        status: status.as_u16(),
                        message,
                    });
                }
                format!("HTTP {status}: {message}")
            }
            Err(e) => e.to_string(),
        };
        if attempts > cfg.max_retries {
            return Err(Error::Transport {
                attempts,
                message: failure,
            });
        }
        let delay = cfg.backoff_ms.saturating_mul(1 << (attempts - 1).min(16));
        log::warn!("request to {url} failed (attempt {attempts}), retrying in {delay} ms: {failure}");
        std::thread::sleep(Duration::from_millis(delay));
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

/// Chat-completions client used to generate behavioral descriptions.
pub struct ChatClient {
    http: reqwest::blocking::Client,
    cfg: EndpointConfig,
}

impl ChatClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(ChatClient {
            http: build_http(&cfg)?,
            cfg,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    /// Sends one chat request built from the rendered prompt (split into
    /// system + user messages) and returns the first choice's text.
    /// Decoding is pinned to temperature 0 for reproducibility.
    pub fn generate_description(&self, client_id: &str, prompt: &str) -> Result<Description> {
        if prompt.trim().is_empty() {
            return Err(Error::Degenerate("empty prompt".into()));
        }
        let (system, user) = split_prompt(prompt);
        let mut messages = Vec::new();
        if !system.is_empty() {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": user}));
        let body = json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": 0,
            "max_tokens": 512,
        });
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let value = post_with_retry(&self.http, &self.cfg, &url, &body)?;
        let parsed: ChatResponse =
            serde_json::from_value(value).map_err(|e| Error::Content(e.to_string()))?;
        let text = parsed
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .unwrap_or_default();
        if text.trim().is_empty() {
            return Err(Error::Content("endpoint returned an empty completion".into()));
        }
        Description::new(client_id, text)
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingRow>,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    embedding: Vec<f64>,
}

/// Embeddings client. The vector dimension is recorded on the first call and
/// enforced on every later one.
pub struct EmbedClient {
    http: reqwest::blocking::Client,
    cfg: EndpointConfig,
    dim: Mutex<Option<usize>>,
}

impl EmbedClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(EmbedClient {
            http: build_http(&cfg)?,
            cfg,
            dim: Mutex::new(None),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    pub fn embed_text(&self, client_id: &str, text: &str) -> Result<TextEmbedding> {
        if text.trim().is_empty() {
            return Err(Error::Degenerate("empty text".into()));
        }
        let body = json!({
            "model": self.cfg.model,
            "input": text,
        });
        let url = format!("{}/embeddings", self.cfg.base_url.trim_end_matches('/'));
        let value = post_with_retry(&self.http, &self.cfg, &url, &body)?;
        let parsed: EmbeddingResponse =
            serde_json::from_value(value).map_err(|e| Error::Content(e.to_string()))?;
        let vector = parsed
            .data
            .into_iter()
            .next()
            .map(|r| r.embedding)
            .ok_or_else(|| Error::Content("endpoint returned no embedding rows".into()))?;
        if vector.is_empty() || vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Content("embedding has empty or non-finite entries".into()));
        }

        let mut dim = self.dim.lock().unwrap();
        match *dim {
            None => *dim = Some(vector.len()),
            Some(expected) if expected != vector.len() => {
                return Err(Error::DimensionMismatch {
                    expected,
                    got: vector.len(),
                });
            }
            _ => {}
        }

        Ok(TextEmbedding {
            client_id: client_id.to_string(),
            vector,
        })
    }
}
