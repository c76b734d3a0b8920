//! Speculative plan execution.
//!
//! [`Coordinator`] holds all run state. Two drivers feed it:
//! [`VirtualDriver`] on a discrete-event virtual clock (deterministic,
//! used by the simulator and the service) and [`LiveDriver`] on tokio with
//! wall-clock time and real cancellation. [`run_sequential`] is the
//! single-agent baseline.

mod coordinator;
mod live;
mod sequential;
mod virtual_time;

use thiserror::Error;

use crate::agent::{AgentError, ExecutionError};
use crate::events::EventLog;
use crate::presentation::{InterruptError, Presented, UserInterrupt};
use crate::types::{AgentKind, ProcessRecord, Trajectory};

pub use coordinator::{Command, Coordinator, ExecId, Input, TimerId};
pub use live::{run_plan, LiveDriver};
pub use sequential::run_sequential;
pub use virtual_time::{
    ImmediatePacer, Pacer, PausedPacer, ScaledPacer, ScriptedUser, VirtualDriver, VirtualUser,
};

/// An interrupt delivered from outside a running driver, with a reply slot.
#[derive(Debug)]
pub struct InterruptRequest {
    pub interrupt: UserInterrupt,
    pub reply: tokio::sync::oneshot::Sender<Result<(), InterruptError>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanFailure {
    #[error("{kind:?} agent failed at step {index}: {error}")]
    Agent {
        index: usize,
        kind: AgentKind,
        error: AgentError,
    },
    #[error("execution failed at step {index}: {error}")]
    Execution { index: usize, error: ExecutionError },
    #[error("run stalled with no pending work")]
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    /// The last verified step is the terminate sentinel.
    Terminated,
    /// `max_steps` verified steps without a terminate step.
    Overflow,
    Failed(PlanFailure),
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Terminated => "terminate",
            Outcome::Overflow => "overflow",
            Outcome::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid config at `{path}`: {message}")]
    InvalidConfig { path: String, message: String },
    #[error("executor has side effects; set allow_side_effecting_speculation to run it speculatively")]
    SideEffectingExecutor,
    #[error(transparent)]
    Plan(#[from] PlanFailure),
    #[error("plan hit max_steps without a terminate step")]
    PlanOverflow,
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub trajectory: Trajectory,
    pub events: EventLog,
    pub outcome: Outcome,
    pub processes: Vec<ProcessRecord>,
    pub presented: Vec<Presented>,
}

impl PlanResult {
    pub fn is_overflow(&self) -> bool {
        self.outcome == Outcome::Overflow
    }

    pub fn failure(&self) -> Option<&PlanFailure> {
        match &self.outcome {
            Outcome::Failed(f) => Some(f),
            _ => None,
        }
    }

    /// Step contents of the final trajectory.
    pub fn contents(&self) -> Vec<String> {
        self.trajectory
            .entries
            .iter()
            .map(|e| e.step.content.clone())
            .collect()
    }

    /// Converts failures into errors. Overflow stays `Ok` (check
    /// [`PlanResult::is_overflow`]) since the result is still useful.
    pub fn into_result(self) -> Result<PlanResult, EngineError> {
        match self.outcome {
            Outcome::Failed(f) => Err(EngineError::Plan(f)),
            _ => Ok(self),
        }
    }
}

pub(crate) fn check_executor(
    config: &crate::config::EngineConfig,
    executor: &dyn crate::agent::Executor,
) -> Result<(), EngineError> {
    if executor.side_effecting() && !config.allow_side_effecting_speculation {
        return Err(EngineError::SideEffectingExecutor);
    }
    Ok(())
}
