//! Single-agent baseline: one step at a time, no speculation.

use crate::agent::{Agent, Executor};
use crate::config::EngineConfig;
use crate::events::{Event, EventKind, EventLog};
use crate::time::Micros;
use crate::types::{
    AgentKind, ProcessRecord, ProcessStatus, Step, Trajectory, TrajectoryEntry,
};

use super::{check_executor, EngineError, Outcome, PlanFailure, PlanResult};
use crate::agent::StepRequest;

/// Plans with `agent` alone on a virtual clock: each step costs the agent's
/// reported latency plus the execution time.
pub async fn run_sequential(
    task: &str,
    agent: &dyn Agent,
    kind: AgentKind,
    executor: &dyn Executor,
    config: &EngineConfig,
) -> Result<PlanResult, EngineError> {
    config
        .validate()
        .map_err(|(path, message)| EngineError::InvalidConfig { path, message })?;
    check_executor(config, executor)?;
    let mut now = Micros::ZERO;
    let mut log = EventLog::new();
    let mut entries: Vec<TrajectoryEntry> = Vec::new();
    let mut processes = Vec::new();
    let mut outcome = Outcome::Overflow;

    'steps: for index in 0..config.max_steps {
        let request = StepRequest {
            index,
            task: task.to_string(),
            trajectory: Trajectory::new(task, entries.clone()),
        };
        log.push(Event::new(now, EventKind::ProcessStarted, index).agent(kind));
        let start_time = now;
        let mut attempts = 0;
        let ex = loop {
            match agent.propose(&request).await {
                Ok(ex) => break ex,
                Err(e) if e.is_retryable() && attempts < config.agent_retries => {
                    attempts += 1;
                    now += config.retry_backoff;
                }
                Err(error) => {
                    log.push(Event::new(now, EventKind::ProcessCancelled, index).agent(kind));
                    outcome = Outcome::Failed(PlanFailure::Agent { index, kind, error });
                    break 'steps;
                }
            }
        };
        now += ex.latency;
        let step = Step {
            index,
            content: ex.action.trim().to_string(),
            source: kind.into(),
            tokens: ex.completion_tokens,
            prompt_tokens: ex.prompt_tokens,
            gen_duration: ex.latency,
        };
        log.push(
            Event::new(now, EventKind::ProcessFinished, index)
                .agent(kind)
                .content(step.content.clone())
                .tokens(step.tokens, step.prompt_tokens),
        );
        processes.push(ProcessRecord {
            id: processes.len(),
            kind,
            index,
            start_time,
            end_time: Some(now),
            status: ProcessStatus::Completed,
            output: Some(step.clone()),
        });
        log.push(
            Event::new(now, EventKind::StepVerified, index)
                .content(step.content.clone())
                .source(step.source),
        );
        let observation = match executor.execute(&step).await {
            Ok(o) => o,
            Err(error) => {
                outcome = Outcome::Failed(PlanFailure::Execution { index, error });
                break;
            }
        };
        now += observation.exec_duration;
        log.push(Event::new(now, EventKind::StepExecuted, index).content(observation.content.clone()));
        let done = step.is_terminate(&config.terminate_token);
        entries.push(TrajectoryEntry { step, observation });
        if done {
            outcome = Outcome::Terminated;
            break;
        }
    }
    log.push(
        Event::new(now, EventKind::Terminated, entries.len().saturating_sub(1))
            .content(outcome.label()),
    );
    Ok(PlanResult {
        trajectory: Trajectory::new(task, entries),
        events: log,
        outcome,
        processes,
        presented: Vec::new(),
    })
}
