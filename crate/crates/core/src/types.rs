use serde::{Deserialize, Serialize};

use crate::time::Micros;

/// Which agent role a process or step belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentKind {
    #[serde(rename = "A")]
    Approximation,
    #[serde(rename = "T")]
    Target,
}

impl AgentKind {
    pub fn label(self) -> &'static str {
        match self {
            AgentKind::Approximation => "A",
            AgentKind::Target => "T",
        }
    }
}

/// Provenance of a plan step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Approximation,
    Target,
    User,
}

impl From<AgentKind> for Source {
    fn from(kind: AgentKind) -> Self {
        match kind {
            AgentKind::Approximation => Source::Approximation,
            AgentKind::Target => Source::Target,
        }
    }
}

/// One proposed plan action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub content: String,
    pub source: Source,
    /// Completion tokens spent producing the step.
    pub tokens: u64,
    #[serde(default)]
    pub prompt_tokens: u64,
    pub gen_duration: Micros,
}

impl Step {
    pub fn new(index: usize, content: impl Into<String>, source: Source) -> Self {
        Step {
            index,
            content: content.into(),
            source,
            tokens: 0,
            prompt_tokens: 0,
            gen_duration: Micros::ZERO,
        }
    }

    /// Trimmed, case-insensitive comparison against the sentinel.
    pub fn is_terminate(&self, token: &str) -> bool {
        self.content.trim().eq_ignore_ascii_case(token.trim())
    }
}

/// Result of executing a step.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Observation {
    pub content: String,
    pub exec_duration: Micros,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub step: Step,
    pub observation: Observation,
}

/// Ordered `(step, observation)` pairs plus the task prompt rendered from them.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_prompt: String,
    pub entries: Vec<TrajectoryEntry>,
}

impl Trajectory {
    pub fn new(task: &str, entries: Vec<TrajectoryEntry>) -> Self {
        let task_prompt = crate::prompt::render_task_prompt(task, &entries);
        Trajectory {
            task_prompt,
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contents(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.step.content.as_str()).collect()
    }

    pub fn last_step(&self) -> Option<&Step> {
        self.entries.last().map(|e| &e.step)
    }

    /// Indices are consecutive from zero.
    pub fn is_well_indexed(&self) -> bool {
        self.entries
            .iter()
            .enumerate()
            .all(|(i, e)| e.step.index == i)
    }
}

pub type ProcessId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessStatus {
    Running,
    Completed,
    Cancelled,
}

/// Lifetime of one agent invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessRecord {
    pub id: ProcessId,
    pub kind: AgentKind,
    pub index: usize,
    pub start_time: Micros,
    pub end_time: Option<Micros>,
    pub status: ProcessStatus,
    pub output: Option<Step>,
}

impl ProcessRecord {
    pub fn is_running(&self) -> bool {
        self.status == ProcessStatus::Running
    }
}
