//! The event log: a totally ordered record of everything a run did.
//!
//! Serialized as line-delimited JSON, one event per line:
//!
//! ```text
//! {"t":2.0,"type":"process_finished","index":0,"kind":"A","content":"split money","tokens":10}
//! ```
//!
//! `t` is seconds since run start. Optional fields are omitted when absent.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Micros;
use crate::types::{AgentKind, Source};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ProcessStarted,
    ProcessFinished,
    ProcessCancelled,
    StepVerified,
    StepRejected,
    StepExecuted,
    PresentApprox,
    PresentTarget,
    WindowOpen,
    WindowClosed,
    UserInterrupt,
    Terminated,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::ProcessStarted => "process_started",
            EventKind::ProcessFinished => "process_finished",
            EventKind::ProcessCancelled => "process_cancelled",
            EventKind::StepVerified => "step_verified",
            EventKind::StepRejected => "step_rejected",
            EventKind::StepExecuted => "step_executed",
            EventKind::PresentApprox => "present_approx",
            EventKind::PresentTarget => "present_target",
            EventKind::WindowOpen => "window_open",
            EventKind::WindowClosed => "window_closed",
            EventKind::UserInterrupt => "user_interrupt",
            EventKind::Terminated => "terminated",
        }
    }
}

/// Which kind of user override a window accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Open while the user waits on a slow target step after seeing the approximation.
    Latency,
    /// Open briefly after a target step is presented.
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub t: Micros,
    #[serde(rename = "type")]
    pub kind: EventKind,
    pub index: usize,
    #[serde(rename = "kind", default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Source>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowKind>,
}

impl Event {
    pub fn new(t: Micros, kind: EventKind, index: usize) -> Self {
        Event {
            t,
            kind,
            index,
            agent: None,
            content: None,
            tokens: None,
            prompt_tokens: None,
            source: None,
            window: None,
        }
    }

    pub fn agent(mut self, kind: AgentKind) -> Self {
        self.agent = Some(kind);
        self
    }

    pub fn content(mut self, content: impl Into<String>) -> Self {
        self.content = Some(content.into());
        self
    }

    pub fn tokens(mut self, completion: u64, prompt: u64) -> Self {
        self.tokens = Some(completion);
        self.prompt_tokens = Some(prompt);
        self
    }

    pub fn source(mut self, source: Source) -> Self {
        self.source = Some(source);
        self
    }

    pub fn window(mut self, window: WindowKind) -> Self {
        self.window = Some(window);
        self
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serialization is infallible")
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("event log is empty")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InvariantViolation {
    TimeWentBackwards { position: usize },
    UnmatchedProcessEnd { position: usize },
    DuplicateStart { position: usize },
    TooManyTargets { position: usize, running: usize, k: usize },
    TooManyProcesses { position: usize, running: usize, k: usize },
}

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Ordered sequence of events.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn new() -> Self {
        EventLog::default()
    }

    pub fn push(&mut self, event: Event) {
        self.events.push(event);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Event> {
        self.events.iter()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.of_kind(kind).count()
    }

    pub fn last_time(&self) -> Micros {
        self.events.last().map(|e| e.t).unwrap_or_default()
    }

    /// One JSON object per line, each terminated by `\n`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.to_json_line());
            out.push('\n');
        }
        out
    }

    /// Parses line-delimited JSON. Blank lines are skipped; line numbers in
    /// errors are 1-based.
    pub fn from_jsonl(text: &str) -> Result<EventLog, LogError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let event: Event = serde_json::from_str(line).map_err(|e| LogError::Corrupt {
                line: i + 1,
                message: e.to_string(),
            })?;
            events.push(event);
        }
        if events.is_empty() {
            return Err(LogError::Empty);
        }
        Ok(EventLog { events })
    }

    pub fn read_file(path: &std::path::Path) -> Result<EventLog, LogError> {
        let text = std::fs::read_to_string(path)?;
        EventLog::from_jsonl(&text)
    }

    /// Checks ordering, start/end pairing and, when `k` is given, the
    /// speculation bound (at most `k` targets and `k + 1` processes running).
    pub fn check_invariants(&self, k: Option<usize>) -> Result<(), InvariantViolation> {
        let mut running: HashMap<(AgentKind, usize), ()> = HashMap::new();
        let mut targets = 0usize;
        let mut last = Micros::ZERO;
        for (pos, e) in self.events.iter().enumerate() {
            if e.t < last {
                return Err(InvariantViolation::TimeWentBackwards { position: pos });
            }
            last = e.t;
            let Some(agent) = e.agent else { continue };
            match e.kind {
                EventKind::ProcessStarted => {
                    if running.insert((agent, e.index), ()).is_some() {
                        return Err(InvariantViolation::DuplicateStart { position: pos });
                    }
                    if agent == AgentKind::Target {
                        targets += 1;
                    }
                }
                EventKind::ProcessFinished | EventKind::ProcessCancelled => {
                    if running.remove(&(agent, e.index)).is_none() {
                        return Err(InvariantViolation::UnmatchedProcessEnd { position: pos });
                    }
                    if agent == AgentKind::Target {
                        targets -= 1;
                    }
                }
                _ => continue,
            }
            if let Some(k) = k {
                if targets > k {
                    return Err(InvariantViolation::TooManyTargets {
                        position: pos,
                        running: targets,
                        k,
                    });
                }
                if running.len() > k + 1 {
                    return Err(InvariantViolation::TooManyProcesses {
                        position: pos,
                        running: running.len(),
                        k,
                    });
                }
            }
        }
        Ok(())
    }
}

impl FromIterator<Event> for EventLog {
    fn from_iter<I: IntoIterator<Item = Event>>(iter: I) -> Self {
        EventLog {
            events: iter.into_iter().collect(),
        }
    }
}
