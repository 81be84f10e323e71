//! HTTP adapters for hosted model APIs.

use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::client::{
    ClientError, Completion, CompletionRequest, ModelClient, Provider, ReasonerConfig, Usage,
};

/// A model behind an HTTP endpoint. The API key is read from the configured
/// environment variable on every call and never stored.
pub struct HttpModel {
    config: ReasonerConfig,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpModel")
            .field("provider", &self.config.provider)
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .finish()
    }
}

impl HttpModel {
    pub fn new(config: ReasonerConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        HttpModel { config, agent }
    }

    fn api_key(&self) -> Result<Option<String>, ClientError> {
        match &self.config.api_key_ref {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(v) if !v.is_empty() => Ok(Some(v)),
                _ => Err(ClientError::service(
                    None,
                    format!("API key variable `{var}` is not set"),
                )),
            },
        }
    }
}

/// Request line, headers and JSON body for one call.
#[derive(Debug, Clone, PartialEq)]
pub struct WireRequest {
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Value,
}

pub fn build_request(
    config: &ReasonerConfig,
    request: &CompletionRequest,
    api_key: Option<&str>,
) -> WireRequest {
    let mut headers = vec![("content-type".to_string(), "application/json".to_string())];
    let (url, body) = match config.provider {
        Provider::OpenAi | Provider::Mock => {
            if let Some(key) = api_key {
                headers.push(("authorization".into(), format!("Bearer {key}")));
            }
            let mut messages = Vec::new();
            if let Some(system) = &request.system {
                messages.push(json!({"role": "system", "content": system}));
            }
            messages.push(json!({"role": "user", "content": request.user}));
            (
                config.endpoint.clone(),
                json!({
                    "model": config.model,
                    "messages": messages,
                    "temperature": request.temperature,
                    "max_tokens": request.max_output_tokens,
                }),
            )
        }
        Provider::Anthropic => {
            if let Some(key) = api_key {
                headers.push(("x-api-key".into(), key.to_string()));
            }
            headers.push(("anthropic-version".into(), "2023-06-01".into()));
            let mut body = json!({
                "model": config.model,
                "max_tokens": request.max_output_tokens,
                "temperature": request.temperature,
                "messages": [{"role": "user", "content": request.user}],
            });
            if let Some(system) = &request.system {
                body["system"] = json!(system);
            }
            (config.endpoint.clone(), body)
        }
        Provider::Gemini => {
            if let Some(key) = api_key {
                headers.push(("x-goog-api-key".into(), key.to_string()));
            }
            let mut body = json!({
                "contents": [{"role": "user", "parts": [{"text": request.user}]}],
                "generationConfig": {
                    "temperature": request.temperature,
                    "maxOutputTokens": request.max_output_tokens,
                },
            });
            if let Some(system) = &request.system {
                body["systemInstruction"] = json!({"parts": [{"text": system}]});
            }
            let base = config.endpoint.trim_end_matches('/');
            (format!("{base}/{}:generateContent", config.model), body)
        }
    };
    WireRequest { url, headers, body }
}

fn u64_at(v: &Value, path: &[&str]) -> Option<u64> {
    path.iter().try_fold(v, |v, k| v.get(k))?.as_u64()
}

/// Pulls completion text and token usage out of a provider response body.
pub fn parse_response(provider: Provider, body: &Value) -> Result<(String, Option<Usage>), String> {
    let text = match provider {
        Provider::OpenAi | Provider::Mock => body
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string),
        Provider::Anthropic => body.get("content").and_then(Value::as_array).map(|parts| {
            parts
                .iter()
                .filter(|p| p.get("type").and_then(Value::as_str) == Some("text"))
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<String>()
        }),
        Provider::Gemini => body
            .pointer("/candidates/0/content/parts")
            .and_then(Value::as_array)
            .map(|parts| {
                parts
                    .iter()
                    .filter_map(|p| p.get("text").and_then(Value::as_str))
                    .collect::<String>()
            }),
    }
    .ok_or_else(|| "response carries no completion text".to_string())?;

    let usage = match provider {
        Provider::OpenAi | Provider::Mock => u64_at(body, &["usage", "prompt_tokens"])
            .zip(u64_at(body, &["usage", "completion_tokens"])),
        Provider::Anthropic => {
            u64_at(body, &["usage", "input_tokens"]).zip(u64_at(body, &["usage", "output_tokens"]))
        }
        Provider::Gemini => u64_at(body, &["usageMetadata", "promptTokenCount"])
            .zip(u64_at(body, &["usageMetadata", "candidatesTokenCount"])),
    }
    .map(|(input_tokens, output_tokens)| Usage {
        input_tokens,
        output_tokens,
    });
    Ok((text, usage))
}

fn classify(err: ureq::Error, timeout: Duration) -> ClientError {
    match err {
        ureq::Error::Timeout(_) => ClientError::timeout(timeout),
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => {
            ClientError::timeout(timeout)
        }
        other => ClientError::transport(other.to_string()),
    }
}

impl ModelClient for HttpModel {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn preflight(&self) -> Result<(), ClientError> {
        self.api_key().map(|_| ())
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ClientError> {
        let key = self.api_key()?;
        let wire = build_request(&self.config, request, key.as_deref());
        let started = Instant::now();
        let mut builder = self.agent.post(&wire.url);
        for (name, value) in &wire.headers {
            builder = builder.header(name, value);
        }
        let timeout = request.timeout.min(self.config.timeout());
        let mut response = builder
            .config()
            .timeout_global(Some(timeout))
            .build()
            .send_json(&wire.body)
            .map_err(|e| classify(e, timeout))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| classify(e, timeout))?;
        if !(200..300).contains(&status) {
            return Err(ClientError::service(Some(status), text));
        }
        let body: Value = serde_json::from_str(&text)
            .map_err(|e| ClientError::service(Some(status), format!("invalid JSON: {e}")))?;
        let (text, usage) = parse_response(self.config.provider, &body)
            .map_err(|e| ClientError::service(Some(status), e))?;
        Ok(Completion {
            text,
            usage,
            latency: started.elapsed(),
        })
    }
}
