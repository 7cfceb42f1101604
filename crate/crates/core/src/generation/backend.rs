//! Completion backend contract and the chat-completions HTTP client.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MODEL: &str = "gpt-4o";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    /// `None` defers to the backend default (`BENCHFORGE_LLM_MODEL`).
    #[serde(default)]
    pub model_name: Option<String>,
    pub temperature: f64,
    pub n_candidates: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            model_name: None,
            temperature: 0.7,
            n_candidates: 4,
            seed: Some(7),
            max_tokens: 256,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_candidates == 0 {
            return Err("n_candidates must be at least 1".into());
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err("temperature must be non-negative".into());
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        Ok(())
    }

    pub fn with_seed_offset(&self, offset: u64) -> Self {
        GenerationParams {
            seed: Some(self.seed.unwrap_or(0).wrapping_add(offset)),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status} after {attempts} attempt(s): {body}")]
    Status { status: u16, attempts: u32, body: String },
    #[error("malformed completion response: {0}")]
    InvalidResponse(String),
}

impl BackendError {
    pub fn attempts(&self) -> u32 {
        match self {
            BackendError::Transport { attempts, .. } | BackendError::Status { attempts, .. } => *attempts,
            BackendError::InvalidResponse(_) => 1,
        }
    }
}

pub trait CompletionBackend: Send + Sync {
    /// Model identifier recorded as candidate provenance.
    fn model_id(&self, params: &GenerationParams) -> String;

    /// Up to `params.n_candidates` completions for `prompt`, in order.
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<Vec<String>, BackendError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn delay_after(&self, failed_attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(failed_attempt.saturating_sub(1))
    }
}

/// OpenAI-compatible `POST <base>/v1/chat/completions` client.
pub struct HttpBackend {
    base_url: String,
    api_key: Option<String>,
    default_model: String,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    n: usize,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, default_model: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            default_model: default_model.unwrap_or_else(|| DEFAULT_MODEL.to_string()),
            retry: RetryPolicy::default(),
            agent,
        }
    }

    /// Reads `BENCHFORGE_LLM_URL`, `BENCHFORGE_LLM_KEY`, `BENCHFORGE_LLM_MODEL`.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var("BENCHFORGE_LLM_URL").ok().filter(|u| !u.is_empty())?;
        Some(HttpBackend::new(
            url,
            std::env::var("BENCHFORGE_LLM_KEY").ok(),
            std::env::var("BENCHFORGE_LLM_MODEL").ok(),
        ))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn attempt(&self, body: &ChatRequest<'_>) -> Result<Vec<String>, (bool, BackendError)> {
        let mut req = self.agent.post(&format!("{}/v1/chat/completions", self.base_url));
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| {
            (
                true,
                BackendError::Transport {
                    attempts: 0,
                    message: e.to_string(),
                },
            )
        })?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            let retryable = status == 429 || status >= 500;
            return Err((
                retryable,
                BackendError::Status {
                    status,
                    attempts: 0,
                    body: text,
                },
            ));
        }
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| (false, BackendError::InvalidResponse(e.to_string())))?;
        Ok(parsed
            .choices
            .into_iter()
            .map(|c| c.message.content.unwrap_or_default())
            .collect())
    }
}

impl CompletionBackend for HttpBackend {
    fn model_id(&self, params: &GenerationParams) -> String {
        params.model_name.clone().unwrap_or_else(|| self.default_model.clone())
    }

    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<Vec<String>, BackendError> {
        let model = self.model_id(params);
        let body = ChatRequest {
            model: &model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            n: params.n_candidates,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
        };
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.attempt(&body) {
                Ok(texts) => return Ok(texts),
                Err((retryable, err)) => {
                    let err = match err {
                        BackendError::Transport { message, .. } => BackendError::Transport {
                            attempts: attempt,
                            message,
                        },
                        BackendError::Status { status, body, .. } => BackendError::Status {
                            status,
                            attempts: attempt,
                            body,
                        },
                        other => other,
                    };
                    if !retryable || attempt >= self.retry.max_attempts {
                        return Err(err);
                    }
                    let delay = self.retry.delay_after(attempt);
                    log::warn!("completion attempt {attempt} failed ({err}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                }
            }
        }
    }
}
