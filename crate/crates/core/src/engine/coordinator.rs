//! The single-owner state machine behind every driver.
//!
//! Drivers feed it completions, timer expiries and interrupts stamped with
//! the current time, then call [`Coordinator::settle`] once nothing else is
//! due at that instant. It answers with [`Command`]s for the driver to carry
//! out and appends to its event log. It never blocks and never reads a clock.

use std::collections::BTreeMap;

use crate::agent::{AgentError, ExecutionError, StepExchange, StepRequest};
use crate::config::EngineConfig;
use crate::events::{Event, EventKind, EventLog, WindowKind};
use crate::matching::verify_step;
use crate::presentation::{
    ApproxSlot, InterruptError, InterruptKind, PresentationAction, PresentationState, Presented,
    ProcessView, UserInterrupt,
};
use crate::time::Micros;
use crate::types::{
    AgentKind, Observation, ProcessId, ProcessRecord, ProcessStatus, Source, Step, Trajectory,
    TrajectoryEntry,
};

use super::{EngineError, Outcome, PlanFailure, PlanResult};

pub type ExecId = u64;
pub type TimerId = u64;

/// Something that happened outside the coordinator.
#[derive(Debug, Clone)]
pub enum Input {
    ProcessDone {
        pid: ProcessId,
        result: Result<StepExchange, AgentError>,
    },
    ExecDone {
        xid: ExecId,
        result: Result<Observation, ExecutionError>,
    },
    Timer {
        tid: TimerId,
    },
}

/// Work the driver must carry out on the coordinator's behalf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    /// Invoke an agent. `delay` is a retry backoff to wait before the call.
    Launch {
        pid: ProcessId,
        kind: AgentKind,
        request: StepRequest,
        delay: Micros,
    },
    Cancel {
        pid: ProcessId,
    },
    Execute {
        xid: ExecId,
        step: Step,
    },
    StartTimer {
        tid: TimerId,
        after: Micros,
    },
}

#[derive(Debug, Clone)]
struct Proc {
    record: ProcessRecord,
    request: StepRequest,
    attempts: u32,
}

#[derive(Debug, Clone)]
struct Entry {
    step: Step,
    observation: Option<Observation>,
    exec_error: Option<ExecutionError>,
}

impl Entry {
    fn new(step: Step) -> Self {
        Entry {
            step,
            observation: None,
            exec_error: None,
        }
    }
}

pub struct Coordinator {
    config: EngineConfig,
    task: String,
    now: Micros,
    entries: Vec<Entry>,
    verified: usize,
    procs: Vec<Proc>,
    running: BTreeMap<(usize, AgentKind), ProcessId>,
    /// Completed approximations on the currently valid prefix.
    approx_out: BTreeMap<usize, Step>,
    /// Target results waiting for their index to come up for verification.
    target_out: BTreeMap<usize, Step>,
    pending_exec: Option<(ExecId, usize)>,
    next_xid: ExecId,
    next_tid: TimerId,
    next_launch: usize,
    open_windows: BTreeMap<(usize, WindowKind), Option<TimerId>>,
    presentation: PresentationState,
    log: EventLog,
    commands: Vec<Command>,
    outcome: Option<Outcome>,
}

impl Coordinator {
    pub fn new(task: impl Into<String>, config: EngineConfig) -> Result<Self, EngineError> {
        config
            .validate()
            .map_err(|(path, message)| EngineError::InvalidConfig { path, message })?;
        Ok(Coordinator {
            config,
            task: task.into(),
            now: Micros::ZERO,
            entries: Vec::new(),
            verified: 0,
            procs: Vec::new(),
            running: BTreeMap::new(),
            approx_out: BTreeMap::new(),
            target_out: BTreeMap::new(),
            pending_exec: None,
            next_xid: 0,
            next_tid: 0,
            next_launch: 0,
            open_windows: BTreeMap::new(),
            presentation: PresentationState::new(),
            log: EventLog::new(),
            commands: Vec::new(),
            outcome: None,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    pub fn is_done(&self) -> bool {
        self.outcome.is_some()
    }

    pub fn outcome(&self) -> Option<&Outcome> {
        self.outcome.as_ref()
    }

    pub fn events(&self) -> &EventLog {
        &self.log
    }

    pub fn verified_len(&self) -> usize {
        self.verified
    }

    pub fn has_open_window(&self) -> bool {
        !self.open_windows.is_empty()
    }

    pub fn open_windows(&self) -> Vec<(usize, WindowKind)> {
        self.open_windows.keys().copied().collect()
    }

    pub fn running_processes(&self) -> usize {
        self.running.len()
    }

    pub fn take_commands(&mut self) -> Vec<Command> {
        std::mem::take(&mut self.commands)
    }

    fn tick(&mut self, now: Micros) {
        debug_assert!(now >= self.now, "time went backwards");
        self.now = self.now.max(now);
    }

    fn emit(&mut self, event: Event) {
        self.log.push(event);
    }

    fn ev(&self, kind: EventKind, index: usize) -> Event {
        Event::new(self.now, kind, index)
    }

    /// Launches step 0.
    pub fn start(&mut self, now: Micros) {
        self.tick(now);
        self.settle(now);
    }

    pub fn handle(&mut self, now: Micros, input: Input) {
        self.tick(now);
        if self.outcome.is_some() {
            return;
        }
        match input {
            Input::ProcessDone { pid, result } => self.on_process_done(pid, result),
            Input::ExecDone { xid, result } => self.on_exec_done(xid, result),
            Input::Timer { tid } => {
                let key = self
                    .open_windows
                    .iter()
                    .find(|(_, t)| **t == Some(tid))
                    .map(|(k, _)| *k);
                if let Some(key) = key {
                    self.close_window(key);
                }
            }
        }
    }

    /// Runs everything that became possible at this instant: short-circuit
    /// adoption of early targets, verification, presentation, launches and
    /// the termination check.
    pub fn settle(&mut self, now: Micros) {
        self.tick(now);
        while self.outcome.is_none() {
            let mut progressed = self.try_verify();
            progressed |= self.short_circuit();
            self.close_resolved_windows();
            progressed |= self.present();
            progressed |= self.try_launch();
            if self.check_finished() || !progressed {
                break;
            }
        }
    }

    fn request(&self, index: usize) -> StepRequest {
        let entries = self.entries[..index]
            .iter()
            .map(|e| TrajectoryEntry {
                step: e.step.clone(),
                observation: e.observation.clone().unwrap_or_default(),
            })
            .collect();
        StepRequest {
            index,
            task: self.task.clone(),
            trajectory: Trajectory::new(&self.task, entries),
        }
    }

    fn try_launch(&mut self) -> bool {
        let i = self.entries.len();
        if self.next_launch != i || i >= self.config.max_steps || self.pending_exec.is_some() {
            return false;
        }
        if let Some(last) = self.entries.last() {
            if last.observation.is_none() || last.step.is_terminate(&self.config.terminate_token) {
                return false;
            }
        }
        let k = self.config.k;
        if self.verified < (i / k) * k {
            return false;
        }
        self.next_launch = i + 1;
        let request = self.request(i);
        self.spawn(AgentKind::Approximation, request.clone());
        self.spawn(AgentKind::Target, request);
        true
    }

    fn spawn(&mut self, kind: AgentKind, request: StepRequest) {
        let pid = self.procs.len();
        let index = request.index;
        self.procs.push(Proc {
            record: ProcessRecord {
                id: pid,
                kind,
                index,
                start_time: self.now,
                end_time: None,
                status: ProcessStatus::Running,
                output: None,
            },
            request: request.clone(),
            attempts: 0,
        });
        self.running.insert((index, kind), pid);
        self.emit(self.ev(EventKind::ProcessStarted, index).agent(kind));
        self.commands.push(Command::Launch {
            pid,
            kind,
            request,
            delay: Micros::ZERO,
        });
    }

    fn cancel(&mut self, pid: ProcessId) {
        let p = &mut self.procs[pid];
        if !p.record.is_running() {
            return;
        }
        p.record.status = ProcessStatus::Cancelled;
        p.record.end_time = Some(self.now);
        let (index, kind) = (p.record.index, p.record.kind);
        self.running.remove(&(index, kind));
        self.emit(self.ev(EventKind::ProcessCancelled, index).agent(kind));
        self.commands.push(Command::Cancel { pid });
    }

    fn execute(&mut self, index: usize) {
        let xid = self.next_xid;
        self.next_xid += 1;
        self.pending_exec = Some((xid, index));
        self.commands.push(Command::Execute {
            xid,
            step: self.entries[index].step.clone(),
        });
    }

    fn on_process_done(&mut self, pid: ProcessId, result: Result<StepExchange, AgentError>) {
        let Some(p) = self.procs.get_mut(pid) else {
            return;
        };
        if !p.record.is_running() {
            return;
        }
        let (index, kind) = (p.record.index, p.record.kind);
        match result {
            Ok(ex) => {
                let step = Step {
                    index,
                    content: ex.action.trim().to_string(),
                    source: kind.into(),
                    tokens: ex.completion_tokens,
                    prompt_tokens: ex.prompt_tokens,
                    gen_duration: ex.latency,
                };
                p.record.status = ProcessStatus::Completed;
                p.record.end_time = Some(self.now);
                p.record.output = Some(step.clone());
                self.running.remove(&(index, kind));
                self.emit(
                    self.ev(EventKind::ProcessFinished, index)
                        .agent(kind)
                        .content(step.content.clone())
                        .tokens(step.tokens, step.prompt_tokens),
                );
                match kind {
                    AgentKind::Approximation => {
                        self.approx_out.insert(index, step.clone());
                        if self.entries.len() == index {
                            self.entries.push(Entry::new(step));
                            self.execute(index);
                        }
                    }
                    AgentKind::Target => {
                        self.target_out.insert(index, step);
                    }
                }
                self.try_verify();
            }
            Err(e) if e.is_retryable() && p.attempts < self.config.agent_retries => {
                p.attempts += 1;
                let request = p.request.clone();
                self.commands.push(Command::Launch {
                    pid,
                    kind,
                    request,
                    delay: self.config.retry_backoff,
                });
            }
            Err(error) => match kind {
                // A failed approximation only costs speculation; the target
                // result is adopted directly once it arrives.
                AgentKind::Approximation => {
                    p.record.status = ProcessStatus::Cancelled;
                    p.record.end_time = Some(self.now);
                    self.running.remove(&(index, kind));
                    self.emit(
                        self.ev(EventKind::ProcessCancelled, index)
                            .agent(kind)
                            .content(error.to_string()),
                    );
                }
                AgentKind::Target => self.fail(PlanFailure::Agent { index, kind, error }),
            },
        }
    }

    fn on_exec_done(&mut self, xid: ExecId, result: Result<Observation, ExecutionError>) {
        let Some((pending, index)) = self.pending_exec else {
            return;
        };
        if pending != xid {
            return;
        }
        self.pending_exec = None;
        match result {
            Ok(obs) => {
                self.emit(
                    self.ev(EventKind::StepExecuted, index)
                        .content(obs.content.clone()),
                );
                self.entries[index].observation = Some(obs);
            }
            Err(error) if index < self.verified => {
                self.fail(PlanFailure::Execution { index, error });
            }
            // Speculative step: only fatal if it survives verification.
            Err(error) => self.entries[index].exec_error = Some(error),
        }
    }

    fn try_verify(&mut self) -> bool {
        let mut progressed = false;
        while self.outcome.is_none() && self.verified < self.entries.len() {
            let j = self.verified;
            let entry = &self.entries[j].step;
            match entry.source {
                Source::Target | Source::User => {
                    let e = self
                        .ev(EventKind::StepVerified, j)
                        .content(entry.content.clone())
                        .source(entry.source);
                    self.verified += 1;
                    self.target_out.remove(&j);
                    self.emit(e);
                }
                Source::Approximation => {
                    let Some(t) = self.target_out.remove(&j) else {
                        break;
                    };
                    if verify_step(entry, &t, &self.config.match_policy) {
                        let e = self
                            .ev(EventKind::StepVerified, j)
                            .content(entry.content.clone())
                            .source(Source::Approximation);
                        self.verified += 1;
                        self.emit(e);
                    } else {
                        self.emit(
                            self.ev(EventKind::StepRejected, j)
                                .content(t.content.clone())
                                .source(Source::Target),
                        );
                        self.resolve_mismatch(j, t);
                    }
                }
            }
            progressed = true;
            if let Some(error) = self.entries.get(j).and_then(|e| e.exec_error.clone()) {
                if j < self.verified {
                    self.fail(PlanFailure::Execution { index: j, error });
                }
            }
        }
        progressed
    }

    /// Replaces the step at `j` with `step`, dropping everything speculated
    /// on the old prefix.
    fn resolve_mismatch(&mut self, j: usize, step: Step) {
        let stale: Vec<ProcessId> = self
            .running
            .range((j, AgentKind::Approximation)..)
            .map(|(_, pid)| *pid)
            .collect();
        for pid in stale {
            self.cancel(pid);
        }
        self.approx_out.retain(|&i, _| i <= j);
        self.target_out.retain(|&i, _| i < j);
        if self.pending_exec.is_some_and(|(_, i)| i >= j) {
            self.pending_exec = None;
        }
        let windows: Vec<_> = self
            .open_windows
            .range((j, WindowKind::Latency)..)
            .map(|(k, _)| *k)
            .collect();
        for key in windows {
            self.close_window(key);
        }
        self.entries.truncate(j);
        self.entries.push(Entry::new(step));
        self.verified = j + 1;
        self.next_launch = j + 1;
        self.execute(j);
    }

    /// A target result for the next unproposed index wins over a still
    /// running approximation.
    fn short_circuit(&mut self) -> bool {
        let i = self.entries.len();
        if self.next_launch != i + 1 || !self.target_out.contains_key(&i) {
            return false;
        }
        if let Some(&pid) = self.running.get(&(i, AgentKind::Approximation)) {
            self.cancel(pid);
        }
        let t = self.target_out.remove(&i).expect("checked above");
        self.entries.push(Entry::new(t));
        self.execute(i);
        self.try_verify();
        true
    }

    fn open_window(&mut self, index: usize, kind: WindowKind) {
        let timer = match kind {
            WindowKind::Latency => None,
            WindowKind::Target => {
                let tid = self.next_tid;
                self.next_tid += 1;
                self.commands.push(Command::StartTimer {
                    tid,
                    after: self.config.interrupt_window,
                });
                Some(tid)
            }
        };
        self.open_windows.insert((index, kind), timer);
        self.emit(self.ev(EventKind::WindowOpen, index).window(kind));
    }

    fn close_window(&mut self, key: (usize, WindowKind)) {
        if self.open_windows.remove(&key).is_some() {
            self.emit(self.ev(EventKind::WindowClosed, key.0).window(key.1));
        }
    }

    fn close_resolved_windows(&mut self) {
        let resolved: Vec<_> = self
            .open_windows
            .keys()
            .filter(|(i, kind)| *kind == WindowKind::Latency && *i < self.verified)
            .copied()
            .collect();
        for key in resolved {
            self.close_window(key);
        }
    }

    fn present(&mut self) -> bool {
        let mut state = std::mem::take(&mut self.presentation);
        let mut actions = Vec::new();
        loop {
            let view = View {
                entries: &self.entries,
                verified: self.verified,
                approx_out: &self.approx_out,
            };
            match state.reschedule_next(&view, self.now) {
                Some(a) => actions.push(a),
                None => break,
            }
        }
        self.presentation = state;
        let progressed = !actions.is_empty();
        for action in actions {
            match action {
                PresentationAction::PresentApprox { index, step } => self.emit(
                    self.ev(EventKind::PresentApprox, index)
                        .agent(AgentKind::Approximation)
                        .content(step.content)
                        .source(Source::Approximation),
                ),
                PresentationAction::OpenWindow { index } => {
                    if index >= self.verified {
                        self.open_window(index, WindowKind::Latency);
                    }
                }
                PresentationAction::SkipApprox { .. } => {}
                PresentationAction::PresentTarget { index, step } => {
                    let source = step.source;
                    self.emit(
                        self.ev(EventKind::PresentTarget, index)
                            .agent(AgentKind::Target)
                            .content(step.content)
                            .source(source),
                    );
                    if source != Source::User && self.config.interrupt_window > Micros::ZERO {
                        self.open_window(index, WindowKind::Target);
                    }
                }
            }
        }
        progressed
    }

    fn check_finished(&mut self) -> bool {
        let Some(last) = self.entries.last() else {
            return false;
        };
        if self.verified != self.entries.len() || last.observation.is_none() {
            return false;
        }
        if last.step.is_terminate(&self.config.terminate_token) {
            self.finish(Outcome::Terminated);
        } else if self.entries.len() >= self.config.max_steps {
            self.finish(Outcome::Overflow);
        } else {
            return false;
        }
        true
    }

    fn finish(&mut self, outcome: Outcome) {
        let running: Vec<ProcessId> = self.running.values().copied().collect();
        for pid in running {
            self.cancel(pid);
        }
        let windows: Vec<_> = self.open_windows.keys().copied().collect();
        for key in windows {
            self.close_window(key);
        }
        self.pending_exec = None;
        let index = self.entries.len().saturating_sub(1);
        self.emit(
            self.ev(EventKind::Terminated, index)
                .content(outcome.label()),
        );
        self.outcome = Some(outcome);
    }

    /// Ends the run with an error. Used by drivers for failures they detect
    /// themselves, such as a queue that ran dry.
    pub fn fail(&mut self, failure: PlanFailure) {
        if self.outcome.is_none() {
            self.finish(Outcome::Failed(failure));
        }
    }

    /// Applies a user override at the current instant.
    pub fn interrupt(&mut self, now: Micros, ui: UserInterrupt) -> Result<(), InterruptError> {
        self.tick(now);
        if self.outcome.is_some() {
            return Err(InterruptError::Finished);
        }
        ui.validate()?;
        let i = ui.index;
        let key = (i, ui.kind.window());
        if !self.open_windows.contains_key(&key) {
            let frontier = self.presentation.t_tracker;
            if i + 1 < frontier {
                return Err(InterruptError::Backtrack {
                    index: i,
                    frontier: frontier - 1,
                });
            }
            return Err(InterruptError::Stale {
                index: i,
                kind: ui.kind,
            });
        }
        let content = ui.content.trim().to_string();
        self.close_window(key);
        self.emit(
            self.ev(EventKind::UserInterrupt, i)
                .content(content.clone())
                .source(Source::User)
                .window(key.1),
        );
        let user_step = Step::new(i, content.clone(), Source::User);
        let same = self.entries[i].step.content.trim() == content;
        match ui.kind {
            InterruptKind::LatencyOverride => {
                if let Some(&pid) = self.running.get(&(i, AgentKind::Target)) {
                    self.cancel(pid);
                }
                if same {
                    self.entries[i].step.source = Source::User;
                    self.target_out.remove(&i);
                    self.verified = i + 1;
                    self.emit(
                        self.ev(EventKind::StepVerified, i)
                            .content(content)
                            .source(Source::User),
                    );
                    self.try_verify();
                } else {
                    self.emit(
                        self.ev(EventKind::StepRejected, i)
                            .content(content)
                            .source(Source::User),
                    );
                    self.resolve_mismatch(i, user_step);
                }
            }
            InterruptKind::TargetOverride => {
                if same {
                    self.entries[i].step.source = Source::User;
                } else {
                    self.emit(
                        self.ev(EventKind::StepRejected, i)
                            .content(content)
                            .source(Source::User),
                    );
                    self.resolve_mismatch(i, user_step);
                    self.presentation.rewind_to(i);
                }
            }
        }
        Ok(())
    }

    pub fn presented(&self) -> &[Presented] {
        &self.presentation.presented
    }

    /// Consumes the coordinator. Unfinished runs are reported as stalled.
    pub fn into_result(mut self) -> PlanResult {
        if self.outcome.is_none() {
            self.fail(PlanFailure::Stalled);
        }
        let entries = self
            .entries
            .iter()
            .take(self.verified)
            .take_while(|e| e.observation.is_some())
            .map(|e| TrajectoryEntry {
                step: e.step.clone(),
                observation: e.observation.clone().unwrap_or_default(),
            })
            .collect();
        PlanResult {
            trajectory: Trajectory::new(&self.task, entries),
            events: self.log,
            outcome: self.outcome.expect("set above"),
            processes: self.procs.into_iter().map(|p| p.record).collect(),
            presented: self.presentation.presented,
        }
    }
}

struct View<'a> {
    entries: &'a [Entry],
    verified: usize,
    approx_out: &'a BTreeMap<usize, Step>,
}

impl ProcessView for View<'_> {
    fn approx_output(&self, index: usize) -> ApproxSlot {
        match self.approx_out.get(&index) {
            Some(s) => ApproxSlot::Ready(s.clone()),
            None if index < self.verified => ApproxSlot::Skipped,
            None => ApproxSlot::Pending,
        }
    }

    fn target_output(&self, index: usize) -> Option<Step> {
        (index < self.verified).then(|| self.entries[index].step.clone())
    }
}
