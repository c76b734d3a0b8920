//! Request and response bodies.

use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use specplan_agents::{AgentEndpointConfig, CassetteMode};
use specplan_core::analytics::{MetricsReport, PriceTable};
use specplan_core::simkit::{sim_config, GridBase, SimWorld};
use specplan_core::{EngineConfig, Micros, WindowKind};

use crate::error::ApiError;

/// `POST /sessions` body.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    /// Partial configs are filled from defaults. Simulated sessions default
    /// to the simulation config, so an absent `max_steps` becomes `n`.
    #[serde(default)]
    pub config: EngineConfig,
    pub mode: SessionMode,
    #[serde(default)]
    pub clock: ClockSpec,
    #[serde(default)]
    pub prices: PriceTable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    Simulated(SimulatedMode),
    Live(LiveMode),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatedMode {
    pub n: usize,
    pub accuracy: f64,
    pub seed: u64,
    /// Approximation and target step latency.
    pub time_a: Micros,
    pub time_t: Micros,
    pub tok_a: u64,
    pub tok_t: u64,
    pub exec: Micros,
}

impl Default for SimulatedMode {
    fn default() -> Self {
        let b = GridBase::default();
        SimulatedMode {
            n: b.n,
            accuracy: 1.0,
            seed: b.seed,
            time_a: b.time_a,
            time_t: b.time_t,
            tok_a: b.tok_a,
            tok_t: b.tok_t,
            exec: b.exec,
        }
    }
}

impl SimulatedMode {
    pub fn base(&self) -> GridBase {
        GridBase {
            n: self.n,
            time_a: self.time_a,
            time_t: self.time_t,
            tok_a: self.tok_a,
            tok_t: self.tok_t,
            exec: self.exec,
            seed: self.seed,
        }
    }

    pub fn world(&self) -> SimWorld {
        self.base().world(self.accuracy, self.seed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiveMode {
    pub approximation: AgentEndpointConfig,
    pub target: AgentEndpointConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cassette: Option<CassetteSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CassetteSpec {
    pub mode: CassetteModeSpec,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CassetteModeSpec {
    Record,
    Replay,
}

impl From<CassetteModeSpec> for CassetteMode {
    fn from(m: CassetteModeSpec) -> Self {
        match m {
            CassetteModeSpec::Record => CassetteMode::Record,
            CassetteModeSpec::Replay => CassetteMode::Replay,
        }
    }
}

/// How virtual time maps to wall time for virtual-clock sessions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockSpec {
    /// As fast as possible.
    Immediate,
    /// Frozen; `POST /sessions/{id}/advance` releases instants.
    Paused,
    /// One virtual second per `factor` wall seconds.
    Scaled(f64),
}

impl Default for ClockSpec {
    fn default() -> Self {
        ClockSpec::Scaled(1.0)
    }
}

impl CreateSession {
    /// Parses and validates a request body. Errors carry the field path.
    pub fn from_json(body: &[u8]) -> Result<Self, ApiError> {
        let value: serde_json::Value =
            serde_json::from_slice(body).map_err(|e| ApiError::bad_request(None, format!("invalid JSON: {e}")))?;
        let mut req: CreateSession = from_value(&value)?;
        if let SessionMode::Simulated(sim) = &req.mode {
            // fields the caller left out come from the simulation defaults
            let mut merged = serde_json::to_value(sim_config(&sim.world(), req.config.k)).expect("config serializes");
            if let (Some(m), Some(given)) = (merged.as_object_mut(), value.get("config").and_then(|c| c.as_object())) {
                m.extend(given.clone());
            }
            let mut full = value.clone();
            full["config"] = merged;
            req = from_value(&full)?;
        }
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<(), ApiError> {
        self.config
            .validate()
            .map_err(|(path, msg)| ApiError::bad_request(Some(format!("config.{path}")), msg))?;
        self.prices
            .validate()
            .map_err(|m| ApiError::bad_request(Some("prices".into()), m))?;
        if let ClockSpec::Scaled(f) = self.clock {
            if !(f.is_finite() && f >= 0.0) {
                return Err(ApiError::bad_request(Some("clock.scaled".into()), "factor must be finite and non-negative"));
            }
        }
        match &self.mode {
            SessionMode::Simulated(sim) => {
                let field = |f: &str| Some(format!("mode.simulated.{f}"));
                if sim.n == 0 {
                    return Err(ApiError::bad_request(field("n"), "n must be at least 1"));
                }
                if !(0.0..=1.0).contains(&sim.accuracy) {
                    return Err(ApiError::bad_request(field("accuracy"), "accuracy must lie in [0, 1]"));
                }
                for (name, v) in [("time_a", sim.time_a), ("time_t", sim.time_t)] {
                    if v == Micros::ZERO {
                        return Err(ApiError::bad_request(field(name), "latency must be positive"));
                    }
                }
                for (name, v) in [("tok_a", sim.tok_a), ("tok_t", sim.tok_t)] {
                    if v == 0 {
                        return Err(ApiError::bad_request(field(name), "token count must be positive"));
                    }
                }
            }
            SessionMode::Live(live) => {
                for (name, cfg) in [("approximation", &live.approximation), ("target", &live.target)] {
                    cfg.validate().map_err(|e| {
                        ApiError::bad_request(Some(format!("mode.live.{name}.{}", e.field)), e.message)
                    })?;
                }
                if self.task.as_deref().is_none_or(|t| t.trim().is_empty()) {
                    return Err(ApiError::bad_request(Some("task".into()), "live sessions need a task"));
                }
            }
        }
        Ok(())
    }
}

/// Deserializes with the failing field's dotted path in the error.
pub fn from_value<T: DeserializeOwned>(value: &serde_json::Value) -> Result<T, ApiError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let path = (path != ".").then_some(path);
        ApiError::bad_request(path, e.into_inner().to_string())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    /// Running with at least one override window open.
    AwaitingInterruptWindow,
    Completed,
    Failed,
}

impl SessionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionStatus::Running => "running",
            SessionStatus::AwaitingInterruptWindow => "awaiting_interrupt_window",
            SessionStatus::Completed => "completed",
            SessionStatus::Failed => "failed",
        }
    }

    pub fn is_finished(self) -> bool {
        matches!(self, SessionStatus::Completed | SessionStatus::Failed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpenWindow {
    pub index: usize,
    pub window: WindowKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub status: SessionStatus,
    pub events: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub open_windows: Vec<OpenWindow>,
    pub clock: ClockSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsResponse {
    pub id: String,
    pub status: SessionStatus,
    pub outcome: String,
    /// Set for failed sessions: metrics cover only what ran.
    pub partial: bool,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckResult {
    Accepted,
    Stale,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterruptAck {
    pub result: AckResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Advance {
    #[serde(default = "one")]
    pub instants: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
pub struct StreamQuery {
    /// Last sequence number already seen; delivery resumes after it.
    #[serde(default)]
    pub from_seq: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_simulated_body() {
        let req = CreateSession::from_json(br#"{"mode":{"simulated":{"n":7}},"clock":"immediate"}"#).unwrap();
        assert_eq!(req.config.max_steps, 7);
        assert_eq!(req.config.k, 4);
        assert_eq!(req.config.interrupt_window, Micros::from_secs(1));
        assert_eq!(req.clock, ClockSpec::Immediate);
        let req = CreateSession::from_json(br#"{"mode":{"simulated":{}},"config":{"max_steps":3}}"#).unwrap();
        assert_eq!(req.config.max_steps, 3);
        assert_eq!(req.clock, ClockSpec::Scaled(1.0));
    }

    #[test]
    fn errors_carry_field_paths() {
        let path = |body: &str| CreateSession::from_json(body.as_bytes()).unwrap_err().path;
        assert_eq!(path(r#"{"mode":{"simulated":{}},"config":{"k":0}}"#).as_deref(), Some("config.k"));
        assert_eq!(path(r#"{"mode":{"simulated":{"accuracy":"high"}}}"#).as_deref(), Some("mode.simulated.accuracy"));
        assert_eq!(path(r#"{"mode":{"simulated":{"accuracy":1.5}}}"#).as_deref(), Some("mode.simulated.accuracy"));
        assert_eq!(path(r#"{"mode":{"simulated":{"bogus":1}}}"#).as_deref(), Some("mode.simulated.bogus"));
        assert_eq!(path(r#"{"mode":{"simulated":{}},"clock":{"scaled":-1}}"#).as_deref(), Some("clock.scaled"));
        assert!(path(r#"{"mode":{"simulated":{}}"#).is_none());
    }
}
