//! Human-facing serialization of interleaved agent output.
//!
//! Raw completion order is confusing: target steps finish out of order and
//! some outputs are computed on prefixes that later turn out to be wrong. The
//! rescheduler keeps two trackers and presents, strictly alternating,
//! approximation step `i` (once every earlier step has a verified target
//! result) and then target step `i` (once it is resolved). While the user
//! waits between the two, an interrupt window is open for step `i`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{Event, EventKind, EventLog, WindowKind};
use crate::time::Micros;
use crate::types::{AgentKind, Source, Step};

/// State of the approximation slot for one index, as seen by the scheduler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ApproxSlot {
    Pending,
    Ready(Step),
    /// The target resolved the index without a usable approximation.
    Skipped,
}

/// Read access to process results, restricted to the currently valid prefix.
pub trait ProcessView {
    fn approx_output(&self, index: usize) -> ApproxSlot;
    /// The authoritative step at `index`, once resolved.
    fn target_output(&self, index: usize) -> Option<Step>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PresentationAction {
    PresentApprox { index: usize, step: Step },
    OpenWindow { index: usize },
    SkipApprox { index: usize },
    PresentTarget { index: usize, step: Step },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Presented {
    /// Which lane the presentation fills: the approximation preview or the
    /// authoritative (target or user) step.
    pub slot: AgentKind,
    pub source: Source,
    pub index: usize,
    pub content: String,
    pub t: Micros,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PresentationState {
    /// Next approximation index eligible for presentation.
    pub a_tracker: usize,
    /// Next target index eligible for presentation.
    pub t_tracker: usize,
    pub presented: Vec<Presented>,
    pending_window: Option<usize>,
}

impl PresentationState {
    pub fn new() -> Self {
        PresentationState::default()
    }

    /// Decides the next presentation, if any. Call repeatedly until `None`.
    pub fn reschedule_next(
        &mut self,
        view: &impl ProcessView,
        now: Micros,
    ) -> Option<PresentationAction> {
        if let Some(index) = self.pending_window.take() {
            return Some(PresentationAction::OpenWindow { index });
        }
        let i = self.t_tracker;
        if self.a_tracker <= self.t_tracker {
            match view.approx_output(i) {
                ApproxSlot::Ready(step) => {
                    self.a_tracker = i + 1;
                    if view.target_output(i).is_none() {
                        self.pending_window = Some(i);
                    }
                    self.presented.push(Presented {
                        slot: AgentKind::Approximation,
                        source: step.source,
                        index: i,
                        content: step.content.clone(),
                        t: now,
                    });
                    Some(PresentationAction::PresentApprox { index: i, step })
                }
                ApproxSlot::Skipped => {
                    self.a_tracker = i + 1;
                    Some(PresentationAction::SkipApprox { index: i })
                }
                ApproxSlot::Pending => None,
            }
        } else {
            let step = view.target_output(i)?;
            self.t_tracker = i + 1;
            self.presented.push(Presented {
                slot: AgentKind::Target,
                source: step.source,
                index: i,
                content: step.content.clone(),
                t: now,
            });
            Some(PresentationAction::PresentTarget { index: i, step })
        }
    }

    /// Re-arms presentation after the already presented target at `index`
    /// was replaced: the new step at `index` is shown next, then
    /// approximations resume at `index + 1`.
    pub fn rewind_to(&mut self, index: usize) {
        self.a_tracker = self.a_tracker.min(index + 1);
        self.t_tracker = self.t_tracker.min(index);
        if self.pending_window.is_some_and(|w| w > index) {
            self.pending_window = None;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterruptKind {
    /// The user got tired of waiting for the target step and supplies it.
    LatencyOverride,
    /// The user replaces a target step while it is briefly presented.
    TargetOverride,
}

impl InterruptKind {
    pub fn window(self) -> WindowKind {
        match self {
            InterruptKind::LatencyOverride => WindowKind::Latency,
            InterruptKind::TargetOverride => WindowKind::Target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserInterrupt {
    pub kind: InterruptKind,
    pub index: usize,
    pub content: String,
    #[serde(default)]
    pub received_at: Micros,
}

impl UserInterrupt {
    pub fn validate(&self) -> Result<(), InterruptError> {
        if self.content.trim().is_empty() {
            return Err(InterruptError::EmptyContent);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum InterruptError {
    #[error("no open {kind:?} window for step {index}")]
    Stale { index: usize, kind: InterruptKind },
    #[error("step {index} was already presented and closed; going back to earlier steps is not supported (current step {frontier})")]
    Backtrack { index: usize, frontier: usize },
    #[error("interrupt content must not be empty")]
    EmptyContent,
    #[error("the run has already finished")]
    Finished,
}

impl InterruptError {
    /// Stale-class errors are acknowledged as "stale" rather than rejected.
    pub fn is_stale(&self) -> bool {
        matches!(
            self,
            InterruptError::Stale { .. } | InterruptError::Backtrack { .. } | InterruptError::Finished
        )
    }
}

/// Process view reconstructed from a stored event log.
#[derive(Debug, Clone, Default)]
pub struct ReplayView {
    approx: BTreeMap<usize, Step>,
    resolved: Vec<Step>,
}

impl ReplayView {
    pub fn new() -> Self {
        ReplayView::default()
    }

    /// Applies one event; returns the index of an already resolved step that
    /// was replaced, if any.
    pub fn apply(&mut self, e: &Event) -> Option<usize> {
        let step = |source: Source| Step {
            index: e.index,
            content: e.content.clone().unwrap_or_default(),
            source,
            tokens: e.tokens.unwrap_or(0),
            prompt_tokens: e.prompt_tokens.unwrap_or(0),
            gen_duration: Micros::ZERO,
        };
        match e.kind {
            EventKind::ProcessFinished if e.agent == Some(AgentKind::Approximation) => {
                self.approx.insert(e.index, step(Source::Approximation));
                None
            }
            EventKind::StepVerified => {
                self.resolved.truncate(e.index);
                self.resolved.push(step(e.source.unwrap_or(Source::Target)));
                None
            }
            EventKind::StepRejected => {
                let rewound = (e.index < self.resolved.len()).then_some(e.index);
                self.resolved.truncate(e.index);
                self.resolved.push(step(e.source.unwrap_or(Source::Target)));
                self.approx.retain(|&i, _| i <= e.index);
                rewound
            }
            EventKind::UserInterrupt => {
                if let Some(s) = self.resolved.get_mut(e.index) {
                    if Some(s.content.trim()) == e.content.as_deref().map(str::trim) {
                        s.source = Source::User;
                    }
                }
                None
            }
            _ => None,
        }
    }
}

impl ProcessView for ReplayView {
    fn approx_output(&self, index: usize) -> ApproxSlot {
        match self.approx.get(&index) {
            Some(s) => ApproxSlot::Ready(s.clone()),
            None if index < self.resolved.len() => ApproxSlot::Skipped,
            None => ApproxSlot::Pending,
        }
    }

    fn target_output(&self, index: usize) -> Option<Step> {
        self.resolved.get(index).cloned()
    }
}

/// Re-derives the presentation sequence from the process and verification
/// events of a log, ignoring any presentation events already in it.
pub fn replay_presentations(log: &EventLog) -> Vec<Presented> {
    let mut view = ReplayView::new();
    let mut state = PresentationState::new();
    for e in log.iter() {
        if let Some(from) = view.apply(e) {
            state.rewind_to(from);
        }
        while state.reschedule_next(&view, e.t).is_some() {}
    }
    state.presented
}

/// The presentation events a log already contains.
pub fn recorded_presentations(log: &EventLog) -> Vec<Presented> {
    log.iter()
        .filter(|e| matches!(e.kind, EventKind::PresentApprox | EventKind::PresentTarget))
        .map(|e| {
            let slot = match e.kind {
                EventKind::PresentApprox => AgentKind::Approximation,
                _ => AgentKind::Target,
            };
            Presented {
                slot,
                source: e.source.unwrap_or(Source::from(slot)),
                index: e.index,
                content: e.content.clone().unwrap_or_default(),
                t: e.t,
            }
        })
        .collect()
}

/// Projects a presentation sequence onto the final authoritative steps: the
/// last target-slot presentation per index, truncated whenever an earlier
/// index is presented again.
pub fn project_transcript(presented: &[Presented]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for p in presented.iter().filter(|p| p.slot == AgentKind::Target) {
        out.truncate(p.index);
        out.push(p.content.clone());
    }
    out
}

/// Renders a presentation sequence as a plain-text transcript, one line per
/// presentation: time, index, lane (`preview` or `final`), source, content.
pub fn render_transcript(presented: &[Presented]) -> String {
    let mut out = String::new();
    for p in presented {
        let lane = match p.slot {
            AgentKind::Approximation => "preview",
            AgentKind::Target => "final",
        };
        let badge = match p.source {
            Source::Approximation => "approx",
            Source::Target => "target",
            Source::User => "user",
        };
        out.push_str(&format!(
            "[{:>9.3}s] step {:>2} {:<7} {:<6} {}\n",
            p.t.as_secs_f64(),
            p.index,
            lane,
            badge,
            p.content
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Default)]
    struct Fixed {
        approx: BTreeMap<usize, Step>,
        target: BTreeMap<usize, Step>,
    }

    impl ProcessView for Fixed {
        fn approx_output(&self, index: usize) -> ApproxSlot {
            match self.approx.get(&index) {
                Some(s) => ApproxSlot::Ready(s.clone()),
                None if self.target.contains_key(&index) => ApproxSlot::Skipped,
                None => ApproxSlot::Pending,
            }
        }
        fn target_output(&self, index: usize) -> Option<Step> {
            self.target.get(&index).cloned()
        }
    }

    fn drain(state: &mut PresentationState, view: &Fixed) -> Vec<PresentationAction> {
        std::iter::from_fn(|| state.reschedule_next(view, Micros::ZERO)).collect()
    }

    #[test]
    fn empty_queues_present_nothing() {
        let mut s = PresentationState::new();
        assert_eq!(s.reschedule_next(&Fixed::default(), Micros::ZERO), None);
    }

    #[test]
    fn approx_first_then_window_while_target_pending() {
        let mut view = Fixed::default();
        view.approx
            .insert(0, Step::new(0, "split money", Source::Approximation));
        let mut s = PresentationState::new();
        let actions = drain(&mut s, &view);
        assert!(matches!(actions[0], PresentationAction::PresentApprox { index: 0, .. }));
        assert_eq!(actions[1], PresentationAction::OpenWindow { index: 0 });
        assert_eq!(actions.len(), 2);
        assert_eq!((s.a_tracker, s.t_tracker), (1, 0));
    }

    #[test]
    fn targets_presented_in_index_order_regardless_of_arrival() {
        let mut view = Fixed::default();
        for i in 0..3 {
            view.approx
                .insert(i, Step::new(i, format!("a{i}"), Source::Approximation));
        }
        let mut s = PresentationState::new();
        drain(&mut s, &view);
        for i in [2usize, 1, 0] {
            view.target.insert(i, Step::new(i, format!("a{i}"), Source::Target));
            drain(&mut s, &view);
        }
        let targets: Vec<usize> = s
            .presented
            .iter()
            .filter(|p| p.source == Source::Target)
            .map(|p| p.index)
            .collect();
        assert_eq!(targets, vec![0, 1, 2]);
    }

    #[test]
    fn skipped_approximation_goes_straight_to_target() {
        let mut view = Fixed::default();
        view.target.insert(0, Step::new(0, "t0", Source::Target));
        let mut s = PresentationState::new();
        let actions = drain(&mut s, &view);
        assert_eq!(actions[0], PresentationAction::SkipApprox { index: 0 });
        assert!(matches!(actions[1], PresentationAction::PresentTarget { index: 0, .. }));
    }

    #[test]
    fn transcript_projection_handles_rewind() {
        let p = |source: Source, index, c: &str| Presented {
            slot: if source == Source::Approximation {
                AgentKind::Approximation
            } else {
                AgentKind::Target
            },
            source,
            index,
            content: c.into(),
            t: Micros::ZERO,
        };
        let presented = vec![
            p(Source::Approximation, 0, "a0"),
            p(Source::Target, 0, "a0"),
            p(Source::Approximation, 1, "x1"),
            p(Source::Target, 1, "t1"),
            p(Source::Approximation, 2, "a2"),
            p(Source::Target, 2, "a2"),
            // user overrides step 1 after presentation
            p(Source::User, 1, "u1"),
            p(Source::Approximation, 2, "b2"),
            p(Source::Target, 2, "b2"),
        ];
        assert_eq!(project_transcript(&presented), vec!["a0", "u1", "b2"]);
    }

    #[test]
    fn empty_interrupt_content_rejected() {
        let ui = UserInterrupt {
            kind: InterruptKind::LatencyOverride,
            index: 0,
            content: "  ".into(),
            received_at: Micros::ZERO,
        };
        assert_eq!(ui.validate(), Err(InterruptError::EmptyContent));
    }
}
