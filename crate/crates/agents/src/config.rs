use serde::{Deserialize, Serialize};
use specplan_core::Micros;
use thiserror::Error;

/// Where requests go: an OpenAI-style chat-completions server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    /// Base URL; requests are POSTed to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model_id: String,
    /// Name of the environment variable holding the API key. Keys are never
    /// read from config files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
}

impl Endpoint {
    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    /// One call that answers with the action only.
    Direct,
    /// One call that reasons, then states the action.
    ChainOfThought,
    /// Two calls: a thought, then the action.
    #[serde(rename = "react")]
    ReAct,
    /// `agents` debaters over `rounds` rounds; the majority action wins.
    MultiAgentDebate {
        #[serde(default = "two")]
        agents: usize,
        #[serde(default = "two")]
        rounds: usize,
    },
}

fn two() -> usize {
    2
}

impl PromptStyle {
    pub fn label(self) -> &'static str {
        match self {
            PromptStyle::Direct => "direct",
            PromptStyle::ChainOfThought => "chain_of_thought",
            PromptStyle::ReAct => "react",
            PromptStyle::MultiAgentDebate { .. } => "multi_agent_debate",
        }
    }

    /// Remote calls issued per step.
    pub fn calls_per_step(self) -> usize {
        match self {
            PromptStyle::Direct | PromptStyle::ChainOfThought => 1,
            PromptStyle::ReAct => 2,
            PromptStyle::MultiAgentDebate { agents, rounds } => agents * rounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentEndpointConfig {
    pub base_url: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    pub style: PromptStyle,
    #[serde(default = "default_timeout")]
    pub timeout: Micros,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// One endpoint per debater for `MultiAgentDebate`; debaters without an
    /// entry use the main endpoint.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub debaters: Vec<Endpoint>,
}

fn default_timeout() -> Micros {
    Micros::from_secs(60)
}

fn default_retries() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

fn bad(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.into(),
        message: message.into(),
    }
}

impl AgentEndpointConfig {
    pub fn new(base_url: impl Into<String>, model_id: impl Into<String>, style: PromptStyle) -> Self {
        AgentEndpointConfig {
            base_url: base_url.into(),
            model_id: model_id.into(),
            auth_env: None,
            style,
            timeout: default_timeout(),
            max_retries: default_retries(),
            debaters: Vec::new(),
        }
    }

    pub fn endpoint(&self) -> Endpoint {
        Endpoint {
            base_url: self.base_url.clone(),
            model_id: self.model_id.clone(),
            auth_env: self.auth_env.clone(),
        }
    }

    pub fn debater(&self, d: usize) -> Endpoint {
        self.debaters.get(d).cloned().unwrap_or_else(|| self.endpoint())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check_url("base_url", &self.base_url)?;
        if self.model_id.trim().is_empty() {
            return Err(bad("model_id", "must not be empty"));
        }
        if self.timeout == Micros::ZERO {
            return Err(bad("timeout", "must be positive"));
        }
        if let PromptStyle::MultiAgentDebate { agents, rounds } = self.style {
            if agents < 2 {
                return Err(bad("style.agents", "a debate needs at least 2 agents"));
            }
            if rounds < 1 {
                return Err(bad("style.rounds", "a debate needs at least 1 round"));
            }
        }
        for (i, d) in self.debaters.iter().enumerate() {
            check_url(&format!("debaters[{i}].base_url"), &d.base_url)?;
        }
        Ok(())
    }
}

fn check_url(field: &str, raw: &str) -> Result<(), ConfigError> {
    let parsed = url::Url::parse(raw).map_err(|e| bad(field, e.to_string()))?;
    if !matches!(parsed.scheme(), "http" | "https") {
        return Err(bad(field, "scheme must be http or https"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn debate_defaults_to_two_by_two() {
        let cfg: AgentEndpointConfig = serde_json::from_str(
            r#"{"base_url":"http://x","model_id":"m","style":{"multi_agent_debate":{}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.style, PromptStyle::MultiAgentDebate { agents: 2, rounds: 2 });
        assert_eq!(cfg.style.calls_per_step(), 4);
        assert_eq!(cfg.timeout, Micros::from_secs(60));
    }

    #[test]
    fn validation_paths() {
        let mut cfg = AgentEndpointConfig::new("http://localhost:1/v1", "m", PromptStyle::Direct);
        assert!(cfg.validate().is_ok());
        cfg.timeout = Micros::ZERO;
        assert_eq!(cfg.validate().unwrap_err().field, "timeout");
        cfg.timeout = Micros::from_secs(1);
        cfg.style = PromptStyle::MultiAgentDebate { agents: 1, rounds: 2 };
        assert_eq!(cfg.validate().unwrap_err().field, "style.agents");
        cfg.style = PromptStyle::ReAct;
        cfg.base_url = "ftp://x".into();
        assert_eq!(cfg.validate().unwrap_err().field, "base_url");
    }

    #[test]
    fn style_names() {
        let s: PromptStyle = serde_json::from_str(r#""react""#).unwrap();
        assert_eq!(s, PromptStyle::ReAct);
        assert_eq!(serde_json::to_string(&PromptStyle::ChainOfThought).unwrap(), r#""chain_of_thought""#);
    }
}
