//! HTTP clients for the two remote boundaries: the embedding service that
//! hides the vendor speech/text encoders, and the chat service that hides
//! the translation model.
//!
//! Protocols (JSON over POST):
//!
//! * `POST {embed}/embed` with `{"kind": "audio"|"text", "data": <base64
//!   little-endian f32 PCM or plain text>, "dim": d}` returning
//!   `{"vector": [f32, ...]}`.
//! * `POST {policy}/generate` with `{"messages": [...], "audio_refs": [...],
//!   "max_new_tokens": n, "temperature": t, "top_p": p, "top_k": k}`
//!   returning `{"tokens": ["...", ...]}`.
//!
//! Transport failures are retried up to the configured attempt count and
//! surface with the number of attempts made.

use crate::driver::{system_prompt, PolicyError, PolicyRequest, TranslatorPolicy};
use crate::embedding::{Concurrency, EmbedError, EmbeddingProvider};
use crate::stream::WindowAudio;
use base64::Engine as _;
use serde_json::json;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("transport failure after {attempts} attempt(s): {msg}")]
    Transport { attempts: u32, msg: String },
    #[error("service returned status {status}: {msg}")]
    Status { status: u16, msg: String },
    #[error("bad response: {msg}")]
    BadResponse { msg: String },
}

/// Minimal JSON-over-POST client with bounded retries on transport errors.
pub struct HttpJson {
    agent: ureq::Agent,
    max_attempts: u32,
    auth_token: Option<String>,
}

/// Environment variable holding the bearer token forwarded to both remote
/// services. Endpoints come from configuration; only the credential lives in
/// the environment.
pub const AUTH_TOKEN_ENV: &str = "TERMSTREAM_API_TOKEN";

impl HttpJson {
    pub fn new(timeout: Duration, max_attempts: u32) -> Self {
        Self {
            agent: ureq::AgentBuilder::new()
                .timeout(timeout)
                .build(),
            max_attempts: max_attempts.max(1),
            auth_token: std::env::var(AUTH_TOKEN_ENV).ok(),
        }
    }

    pub fn post(&self, url: &str, body: &serde_json::Value) -> Result<serde_json::Value, RemoteError> {
        let payload = body.to_string();
        let mut last_transport = String::new();
        for attempt in 1..=self.max_attempts {
            let mut request = self
                .agent
                .post(url)
                .set("Content-Type", "application/json");
            if let Some(token) = &self.auth_token {
                request = request.set("Authorization", &format!("Bearer {token}"));
            }
            match request.send_string(&payload) {
                Ok(response) => {
                    let text = response.into_string().map_err(|e| RemoteError::BadResponse {
                        msg: e.to_string(),
                    })?;
                    return serde_json::from_str(&text).map_err(|e| RemoteError::BadResponse {
                        msg: format!("invalid JSON: {e}"),
                    });
                }
                Err(ureq::Error::Status(status, response)) => {
                    return Err(RemoteError::Status {
                        status,
                        msg: response.into_string().unwrap_or_default(),
                    });
                }
                Err(ureq::Error::Transport(t)) => {
                    last_transport = t.to_string();
                }
            }
            let _ = attempt;
        }
        Err(RemoteError::Transport {
            attempts: self.max_attempts,
            msg: last_transport,
        })
    }
}

fn vector_from(value: serde_json::Value, dim: usize) -> Result<Vec<f32>, EmbedError> {
    let raw = value
        .get("vector")
        .and_then(|v| v.as_array())
        .ok_or_else(|| EmbedError::Protocol {
            msg: "response has no \"vector\" array".into(),
        })?;
    let vector: Vec<f32> = raw
        .iter()
        .map(|v| v.as_f64().map(|x| x as f32))
        .collect::<Option<_>>()
        .ok_or_else(|| EmbedError::Protocol {
            msg: "vector contains non-numeric entries".into(),
        })?;
    if vector.len() != dim {
        return Err(EmbedError::Dim {
            expected: dim,
            got: vector.len(),
        });
    }
    let norm: f64 = vector.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > crate::embedding::UNIT_NORM_TOL {
        return Err(EmbedError::Protocol {
            msg: format!("service returned a vector with norm {norm}"),
        });
    }
    Ok(vector)
}

fn embed_error(e: RemoteError) -> EmbedError {
    match e {
        RemoteError::Transport { attempts, msg } => EmbedError::Transport { attempts, msg },
        RemoteError::Status { status, msg } => EmbedError::Protocol {
            msg: format!("status {status}: {msg}"),
        },
        RemoteError::BadResponse { msg } => EmbedError::Protocol { msg },
    }
}

/// Embedding provider backed by the remote service.
pub struct RemoteProvider {
    http: HttpJson,
    endpoint: String,
    dim: usize,
}

impl RemoteProvider {
    pub fn new(endpoint: &str, dim: usize, timeout: Duration, max_attempts: u32) -> Self {
        Self {
            http: HttpJson::new(timeout, max_attempts),
            endpoint: endpoint.trim_end_matches('/').to_string(),
            dim,
        }
    }

    fn embed(&self, kind: &str, data: String) -> Result<Vec<f32>, EmbedError> {
        let body = json!({ "kind": kind, "data": data, "dim": self.dim });
        let response = self
            .http
            .post(&format!("{}/embed", self.endpoint), &body)
            .map_err(embed_error)?;
        vector_from(response, self.dim)
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_window(&self, window: &WindowAudio) -> Result<Vec<f32>, EmbedError> {
        if window.samples.is_empty() {
            return Err(EmbedError::EmptyInput("window audio".into()));
        }
        let data = base64::engine::general_purpose::STANDARD.encode(window.byte_content());
        self.embed("audio", data)
    }

    fn embed_term(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyInput("term text".into()));
        }
        self.embed("text", text.to_string())
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Serial
    }
}

/// Translation policy backed by the remote chat service. The conversation is
/// rebuilt per call from the session history the driver supplies, so the
/// service itself can stay stateless.
pub struct RemoteChatPolicy {
    http: HttpJson,
    endpoint: String,
}

impl RemoteChatPolicy {
    pub fn new(endpoint: &str, timeout: Duration, max_attempts: u32) -> Self {
        Self {
            http: HttpJson::new(timeout, max_attempts),
            endpoint: endpoint.trim_end_matches('/').to_string(),
        }
    }

    /// Chat transcript for one request: system, then the visible history as
    /// alternating user/assistant turns, then the current user prompt.
    pub fn messages_for(request: &PolicyRequest<'_>) -> Vec<serde_json::Value> {
        let mut messages = vec![json!({
            "role": "system",
            "content": system_prompt(request.lang),
        })];
        for turn in request.history {
            messages.push(json!({ "role": "user", "content": turn.prompt }));
            messages.push(json!({ "role": "assistant", "content": turn.tokens.join(" ") }));
        }
        messages.push(json!({ "role": "user", "content": request.prompt }));
        messages
    }
}

impl TranslatorPolicy for RemoteChatPolicy {
    fn translate(&mut self, request: &PolicyRequest<'_>) -> Result<Vec<String>, PolicyError> {
        let audio_refs: Vec<String> = request
            .history
            .iter()
            .map(|t| t.audio_ref.clone())
            .chain(std::iter::once(request.audio_ref.clone()))
            .collect();
        let body = json!({
            "messages": Self::messages_for(request),
            "audio_refs": audio_refs,
            "max_new_tokens": request.budget,
            "temperature": request.decoding.temperature,
            "top_p": request.decoding.top_p,
            "top_k": request.decoding.top_k,
        });
        let response = self
            .http
            .post(&format!("{}/generate", self.endpoint), &body)
            .map_err(|e| match e {
                RemoteError::Transport { attempts, msg } => {
                    PolicyError::Transport { attempts, msg }
                }
                RemoteError::Status { status, msg } => PolicyError::Protocol {
                    msg: format!("status {status}: {msg}"),
                },
                RemoteError::BadResponse { msg } => PolicyError::Protocol { msg },
            })?;
        let tokens = response
            .get("tokens")
            .and_then(|v| v.as_array())
            .ok_or_else(|| PolicyError::Protocol {
                msg: "response has no \"tokens\" array".into(),
            })?
            .iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| PolicyError::Protocol {
                msg: "tokens contains non-string entries".into(),
            })?;
        Ok(tokens)
    }

    fn name(&self) -> &'static str {
        "remote-chat"
    }
}
