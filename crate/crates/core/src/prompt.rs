//! Task prompt rendering.
//!
//! The prompt is the task text followed by one line per accepted step. It is
//! always re-rendered from the trajectory, so repairing step `j` rewrites that
//! line in place and drops everything after it.

use crate::types::TrajectoryEntry;

pub fn step_line(index: usize, action: &str, observation: &str) -> String {
    format!("Step {index}: {action} → {observation}")
}

pub fn render_task_prompt(task: &str, entries: &[TrajectoryEntry]) -> String {
    let mut out = String::from(task);
    for e in entries {
        out.push('\n');
        out.push_str(&step_line(
            e.step.index,
            &e.step.content,
            &e.observation.content,
        ));
    }
    out
}
