use serde::{Deserialize, Serialize};

use crate::matching::MatchPolicy;
use crate::time::Micros;

/// Knobs for one speculative planning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Speculation bound: the approximation agent may run at most `k` steps
    /// ahead of a fully verified block boundary.
    pub k: usize,
    /// Ceiling on plan length.
    pub max_steps: usize,
    pub match_policy: MatchPolicy,
    pub terminate_token: String,
    /// How long a presented target step stays open to user overrides.
    pub interrupt_window: Micros,
    /// Engine-level retries for agent errors flagged retryable.
    pub agent_retries: u32,
    pub retry_backoff: Micros,
    /// Must be set to run with an executor that has real side effects, since
    /// approximation steps are executed before they are verified.
    pub allow_side_effecting_speculation: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            k: 4,
            max_steps: 30,
            match_policy: MatchPolicy::exact(),
            terminate_token: "terminate".to_string(),
            interrupt_window: Micros::from_secs(2),
            agent_retries: 2,
            retry_backoff: Micros::from_millis(500),
            allow_side_effecting_speculation: false,
        }
    }
}

impl EngineConfig {
    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    /// Defaults for virtual-time runs: one virtual second override window.
    pub fn simulated(k: usize) -> Self {
        EngineConfig {
            k,
            interrupt_window: Micros::from_secs(1),
            ..EngineConfig::default()
        }
    }

    /// Returns the dotted field path and message of the first violation.
    pub fn validate(&self) -> Result<(), (String, String)> {
        if self.k == 0 {
            return Err(("k".into(), "k must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(("max_steps".into(), "max_steps must be at least 1".into()));
        }
        if self.terminate_token.trim().is_empty() {
            return Err((
                "terminate_token".into(),
                "terminate token must not be empty".into(),
            ));
        }
        self.match_policy
            .validate()
            .map_err(|m| ("match_policy.threshold".into(), m))
    }
}
