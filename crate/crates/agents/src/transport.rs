use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use specplan_core::{AgentError, Micros};

use crate::config::{Endpoint, PromptStyle};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

/// One chat-completion call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatRequest {
    pub endpoint: Endpoint,
    pub style: PromptStyle,
    pub messages: Vec<ChatMessage>,
}

/// Reply text with usage and the time the call took.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency: Micros,
}

#[async_trait]
pub trait ChatTransport: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<Completion, AgentError>;
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: WireUsage,
}

#[derive(Deserialize)]
struct WireChoice {
    message: ChatMessage,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// reqwest-backed transport with per-request timeout and retries on
/// timeouts, connection errors, 429 and 5xx.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    client: reqwest::Client,
    timeout: Duration,
    max_retries: u32,
    backoff: Duration,
}

impl HttpTransport {
    pub fn new(timeout: Micros, max_retries: u32) -> Self {
        HttpTransport {
            client: reqwest::Client::new(),
            timeout: timeout.as_duration(),
            max_retries,
            backoff: Duration::from_millis(200),
        }
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    async fn send_once(&self, request: &ChatRequest) -> Result<Completion, AgentError> {
        let mut builder = self
            .client
            .post(request.endpoint.completions_url())
            .timeout(self.timeout)
            .json(&WireRequest {
                model: &request.endpoint.model_id,
                messages: &request.messages,
            });
        if let Some(var) = &request.endpoint.auth_env {
            let key = std::env::var(var)
                .map_err(|_| AgentError::Other(format!("environment variable {var} is not set")))?;
            builder = builder.bearer_auth(key);
        }
        let started = Instant::now();
        let response = builder.send().await.map_err(|e| AgentError::Transport {
            message: e.to_string(),
            retryable: e.is_timeout() || e.is_connect() || e.is_request(),
        })?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().await.unwrap_or_default();
            return Err(AgentError::Transport {
                message: format!("HTTP {status}: {body}"),
                retryable: status.as_u16() == 429 || status.is_server_error(),
            });
        }
        let body: WireResponse = response.json().await.map_err(|e| AgentError::Transport {
            message: format!("malformed completion: {e}"),
            retryable: e.is_timeout(),
        })?;
        let choice = body.choices.into_iter().next().ok_or_else(|| AgentError::Transport {
            message: "completion has no choices".into(),
            retryable: false,
        })?;
        Ok(Completion {
            text: choice.message.content,
            prompt_tokens: body.usage.prompt_tokens,
            completion_tokens: body.usage.completion_tokens,
            latency: Micros::from_duration(started.elapsed()),
        })
    }
}

#[async_trait]
impl ChatTransport for HttpTransport {
    async fn complete(&self, request: &ChatRequest) -> Result<Completion, AgentError> {
        let mut attempt = 0;
        loop {
            match self.send_once(request).await {
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    attempt += 1;
                    tokio::time::sleep(self.backoff * attempt).await;
                }
                other => return other,
            }
        }
    }
}
