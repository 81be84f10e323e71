use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::statement::Digest;

/// Which wire dialect a model endpoint speaks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    /// OpenAI-compatible chat completions (also vLLM, SGLang, ...).
    #[serde(alias = "openai-compatible")]
    OpenAi,
    Anthropic,
    Gemini,
    /// Fixture-driven deterministic backend.
    #[default]
    Mock,
}

impl fmt::Display for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provider::OpenAi => "openai",
            Provider::Anthropic => "anthropic",
            Provider::Gemini => "gemini",
            Provider::Mock => "mock",
        })
    }
}

/// Settings for one model endpoint. Holds the *name* of the environment
/// variable with the API key, never the key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReasonerConfig {
    pub provider: Provider,
    pub endpoint: String,
    pub model: String,
    pub api_key_ref: Option<String>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Seconds.
    pub request_timeout: f64,
    pub samples: u32,
    /// Extra attempts after a transport or timeout failure.
    pub retries: u32,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        ReasonerConfig {
            provider: Provider::Mock,
            endpoint: String::new(),
            model: "mock-reasoner".to_string(),
            api_key_ref: None,
            temperature: 1.0,
            max_output_tokens: 32_768,
            request_timeout: 600.0,
            samples: 1,
            retries: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("cannot read config {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("cannot parse config: {0}")]
    Syntax(String),
}

impl ConfigError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl ReasonerConfig {
    pub fn validate(&self, section: &str) -> Result<(), ConfigError> {
        let field = |name: &str| format!("{section}.{name}");
        if self.samples < 1 {
            return Err(ConfigError::invalid(field("samples"), "must be at least 1"));
        }
        if !(self.request_timeout > 0.0 && self.request_timeout.is_finite()) {
            return Err(ConfigError::invalid(
                field("request_timeout"),
                "must be positive",
            ));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ConfigError::invalid(
                field("temperature"),
                "must lie in [0, 2]",
            ));
        }
        if self.max_output_tokens == 0 {
            return Err(ConfigError::invalid(
                field("max_output_tokens"),
                "must be positive",
            ));
        }
        if self.model.trim().is_empty() {
            return Err(ConfigError::invalid(field("model"), "must not be empty"));
        }
        if self.provider != Provider::Mock && self.endpoint.trim().is_empty() {
            return Err(ConfigError::invalid(
                field("endpoint"),
                "required for HTTP providers",
            ));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.request_timeout)
    }
}

/// What a request is for. Real adapters ignore it; the mock backend uses it
/// to select fixtures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Purpose {
    Decompose {
        problem_id: String,
        index: usize,
    },
    Prove {
        problem_id: String,
        target: String,
        digest: Digest,
        attempt: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub system: Option<String>,
    pub user: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout: Duration,
    pub purpose: Purpose,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: Option<Usage>,
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClientError {
    #[error("transport error: {message}")]
    Transport { message: String },
    #[error("service error (status {status:?}): {body}")]
    Service { status: Option<u16>, body: String },
    #[error("request timed out after {after_ms} ms")]
    Timeout { after_ms: u64 },
}

impl ClientError {
    pub fn transport(message: impl Into<String>) -> Self {
        ClientError::Transport {
            message: message.into(),
        }
    }

    pub fn service(status: Option<u16>, body: impl Into<String>) -> Self {
        ClientError::Service {
            status,
            body: body.into(),
        }
    }

    pub fn timeout(after: Duration) -> Self {
        ClientError::Timeout {
            after_ms: after.as_millis() as u64,
        }
    }

    /// Transport failures and timeouts are worth one more try.
    pub fn is_retryable(&self) -> bool {
        !matches!(self, ClientError::Service { .. })
    }
}

/// An error tied to the sample index of the request that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("request {index}: {error}")]
pub struct RequestError {
    pub index: usize,
    pub error: ClientError,
}

/// A text-completion endpoint. Implementations are shared across threads.
pub trait ModelClient: Send + Sync {
    fn model_id(&self) -> &str;

    /// Checks local prerequisites (credentials) without touching the network.
    fn preflight(&self) -> Result<(), ClientError> {
        Ok(())
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ClientError>;
}

impl<T: ModelClient + ?Sized> ModelClient for std::sync::Arc<T> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn preflight(&self) -> Result<(), ClientError> {
        (**self).preflight()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ClientError> {
        (**self).complete(request)
    }
}

/// Calls `client` with up to `retries` extra attempts on retryable errors.
pub fn complete_with_retry(
    client: &dyn ModelClient,
    request: &CompletionRequest,
    retries: u32,
) -> Result<Completion, ClientError> {
    let mut last = client.complete(request);
    for _ in 0..retries {
        match &last {
            Err(e) if e.is_retryable() => last = client.complete(request),
            _ => break,
        }
    }
    last
}
