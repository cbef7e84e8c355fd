use crate::period::Period;
use crate::prompting::{Regime, RenderedPrompt};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::time::Duration;
use thiserror::Error;

/// Identifies which firm-period-regime a request scores.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScoreKey {
    pub firm_id: String,
    pub period: Period,
    pub regime: Regime,
}

#[derive(Debug, Clone)]
pub struct ScoreRequest {
    pub key: ScoreKey,
    pub prompt: RenderedPrompt,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited (HTTP {0})")]
    RateLimited(u16),
    #[error("server error (HTTP {status}): {body}")]
    Server { status: u16, body: String },
    #[error("request rejected (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("environment variable {0} holding the auth token is not set")]
    MissingToken(String),
    #[error("no score on record for {0:?}")]
    UnknownKey(ScoreKey),
}

impl ProviderError {
    /// Transport problems, rate limits and 5xx responses are retried.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ProviderError::Transport(_) | ProviderError::RateLimited(_) | ProviderError::Server { .. }
        )
    }
}

/// Anything that turns a rendered prompt into raw response text.
pub trait CompletionProvider: Send + Sync {
    fn model_name(&self) -> &str;
    fn complete(&self, request: &ScoreRequest) -> Result<String, ProviderError>;
}

fn default_request_template() -> Value {
    serde_json::json!({
        "model": "{{model}}",
        "temperature": "{{temperature}}",
        "messages": [{"role": "user", "content": "{{prompt}}"}]
    })
}

fn default_response_pointer() -> String {
    "/choices/0/message/content".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub auth_token_env_var: String,
    pub max_parallel: usize,
    pub max_retries: u32,
    pub timeout_secs: u64,
    pub temperature: f64,
    /// First backoff delay; doubles on each further retry.
    pub backoff_base_ms: u64,
    /// JSON request body. String leaves equal to `{{model}}`, `{{prompt}}` or
    /// `{{temperature}}` are replaced by the corresponding value.
    pub request_template: Value,
    /// JSON pointer to the response text within the provider's reply.
    pub response_pointer: String,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "gpt-4o-mini".into(),
            auth_token_env_var: "OPENAI_API_KEY".into(),
            max_parallel: 4,
            max_retries: 3,
            timeout_secs: 60,
            temperature: 0.0,
            backoff_base_ms: 500,
            request_template: default_request_template(),
            response_pointer: default_response_pointer(),
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_parallel < 1 {
            return Err("provider.max_parallel must be at least 1".into());
        }
        if self.model_name.trim().is_empty() {
            return Err("provider.model_name is empty".into());
        }
        Ok(())
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        fn fill(v: &Value, cfg: &ProviderConfig, prompt: &str) -> Value {
            match v {
                Value::String(s) if s == "{{prompt}}" => Value::String(prompt.to_string()),
                Value::String(s) if s == "{{model}}" => Value::String(cfg.model_name.clone()),
                Value::String(s) if s == "{{temperature}}" => serde_json::json!(cfg.temperature),
                Value::Array(items) => Value::Array(items.iter().map(|x| fill(x, cfg, prompt)).collect()),
                Value::Object(map) => Value::Object(
                    map.iter()
                        .map(|(k, x)| (k.clone(), fill(x, cfg, prompt)))
                        .collect(),
                ),
                other => other.clone(),
            }
        }
        fill(&self.request_template, self, prompt)
    }
}

/// Live chat-completion endpoint over HTTP POST with bearer-token auth.
pub struct HttpProvider {
    config: ProviderConfig,
    token: String,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        let token = std::env::var(&config.auth_token_env_var)
            .map_err(|_| ProviderError::MissingToken(config.auth_token_env_var.clone()))?;
        Ok(Self::with_token(config, token))
    }

    pub fn with_token(config: ProviderConfig, token: String) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, token, agent }
    }
}

impl CompletionProvider for HttpProvider {
    fn model_name(&self) -> &str {
        &self.config.model_name
    }

    fn complete(&self, request: &ScoreRequest) -> Result<String, ProviderError> {
        let body = self.config.request_body(&request.prompt.body);
        let mut resp = self
            .agent
            .post(&self.config.endpoint_url)
            .header("Authorization", &format!("Bearer {}", self.token))
            .send_json(&body)
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        match status {
            200..=299 => {}
            429 => return Err(ProviderError::RateLimited(status)),
            500..=599 => return Err(ProviderError::Server { status, body: text }),
            _ => return Err(ProviderError::Rejected { status, body: text }),
        }
        let json: Value =
            serde_json::from_str(&text).map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        match json.pointer(&self.config.response_pointer) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(other) => Ok(other.to_string()),
            None => Err(ProviderError::BadResponse(format!(
                "nothing at {} in response",
                self.config.response_pointer
            ))),
        }
    }
}
