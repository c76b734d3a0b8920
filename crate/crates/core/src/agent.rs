//! Agent and executor interfaces the engine drives.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Micros;
use crate::types::{Observation, Step, Trajectory};

/// What an agent is asked: produce step `index` given the trajectory prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRequest {
    pub index: usize,
    pub task: String,
    /// Steps `0..index` and their observations; `task_prompt` is rendered.
    pub trajectory: Trajectory,
}

/// One agent answer with its usage accounting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepExchange {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Generation time. Virtual-time drivers schedule completion with it.
    pub latency: Micros,
    /// Full model output, reasoning included.
    pub raw_text: String,
    /// The extracted action text.
    pub action: String,
}

impl StepExchange {
    pub fn simple(action: impl Into<String>, completion_tokens: u64, latency: Micros) -> Self {
        let action = action.into();
        StepExchange {
            prompt_tokens: 0,
            completion_tokens,
            latency,
            raw_text: action.clone(),
            action,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AgentError {
    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },
    #[error("could not parse an action from model output")]
    Parse { raw_text: String },
    #[error("cassette has no recorded response for key {key}")]
    CassetteMiss { key: String },
    #[error("{0}")]
    Other(String),
}

impl AgentError {
    /// Whether the engine should re-issue the request.
    pub fn is_retryable(&self) -> bool {
        match self {
            AgentError::Transport { retryable, .. } => *retryable,
            AgentError::Parse { .. } => true,
            AgentError::CassetteMiss { .. } | AgentError::Other(_) => false,
        }
    }
}

#[async_trait]
pub trait Agent: Send + Sync {
    async fn propose(&self, request: &StepRequest) -> Result<StepExchange, AgentError>;
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{0}")]
pub struct ExecutionError(pub String);

#[async_trait]
pub trait Executor: Send + Sync {
    async fn execute(&self, step: &Step) -> Result<Observation, ExecutionError>;

    /// Executors that touch the outside world must say so; speculative
    /// execution then has to be enabled explicitly in the engine config.
    fn side_effecting(&self) -> bool {
        false
    }
}

/// Pure executor that echoes the action after a fixed delay.
#[derive(Debug, Clone, Default)]
pub struct EchoExecutor {
    pub duration: Micros,
}

#[async_trait]
impl Executor for EchoExecutor {
    async fn execute(&self, step: &Step) -> Result<Observation, ExecutionError> {
        Ok(Observation {
            content: format!("executed: {}", step.content.trim()),
            exec_duration: self.duration,
        })
    }
}

/// Deterministic agent for tests: answers from a closure over the request.
pub struct FnAgent<F>(pub F);

#[async_trait]
impl<F> Agent for FnAgent<F>
where
    F: Fn(&StepRequest) -> Result<StepExchange, AgentError> + Send + Sync,
{
    async fn propose(&self, request: &StepRequest) -> Result<StepExchange, AgentError> {
        (self.0)(request)
    }
}
