//! Speculative agent planning.
//!
//! A fast approximation agent proposes plan steps that are executed right
//! away, while a slower target agent recomputes each step concurrently and
//! has the final word. Mismatches roll the plan back to the target's step.
//! Speculation depth is bounded by `k`, and a human can override steps
//! through interrupt windows.
//!
//! Main entry points:
//! * [`engine::VirtualDriver`] and [`engine::run_plan`] execute plans;
//! * [`analytics`] holds closed-form latency, token and concurrency models
//!   and log-based metrics;
//! * [`simkit`] builds simulated agents and runs parameter grids.

pub mod agent;
pub mod analytics;
pub mod config;
pub mod engine;
pub mod events;
pub mod matching;
pub mod presentation;
pub mod prompt;
pub mod simkit;
pub mod time;
pub mod types;

pub use agent::{
    Agent, AgentError, EchoExecutor, ExecutionError, Executor, FnAgent, StepExchange, StepRequest,
};
pub use config::EngineConfig;
pub use engine::{EngineError, Outcome, PlanFailure, PlanResult};
pub use events::{Event, EventKind, EventLog, LogError, WindowKind};
pub use matching::{normalized_edit_distance, verify_step, MatchKind, MatchPolicy};
pub use presentation::{InterruptError, InterruptKind, Presented, UserInterrupt};
pub use time::Micros;
pub use types::{
    AgentKind, Observation, ProcessId, ProcessRecord, ProcessStatus, Source, Step, Trajectory,
    TrajectoryEntry,
};

/// Whether the run's last verified step is the terminate sentinel.
pub fn terminate_check(trajectory: &Trajectory, config: &EngineConfig) -> bool {
    trajectory
        .last_step()
        .is_some_and(|s| s.is_terminate(&config.terminate_token))
}
