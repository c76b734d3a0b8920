use std::sync::Arc;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentError, ExecutionError, Executor, StepExchange, StepRequest};
use crate::analytics::StepProfile;
use crate::time::Micros;
use crate::types::{AgentKind, Observation, Step};

/// Latency and token cost of a simulated agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimAgentSpec {
    pub role: AgentKind,
    pub step_latency: Micros,
    pub step_tokens: u64,
    /// Per-step latency overriding `step_latency` where present.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub latency_overrides: Vec<Micros>,
}

impl SimAgentSpec {
    pub fn new(role: AgentKind, step_latency: Micros, step_tokens: u64) -> Self {
        SimAgentSpec {
            role,
            step_latency,
            step_tokens,
            latency_overrides: Vec::new(),
        }
    }

    pub fn latency_at(&self, index: usize) -> Micros {
        self.latency_overrides
            .get(index)
            .copied()
            .unwrap_or(self.step_latency)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.step_latency == Micros::ZERO || self.latency_overrides.contains(&Micros::ZERO) {
            return Err(format!("{:?} step latency must be positive", self.role));
        }
        if self.step_tokens == 0 {
            return Err(format!("{:?} step tokens must be positive", self.role));
        }
        Ok(())
    }
}

/// A task with a known correct plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimWorld {
    pub n: usize,
    /// `n` step texts; the last one is the terminate sentinel.
    pub ground_truth: Vec<String>,
    /// Probability that the approximation gets a step right on a correct prefix.
    pub accuracy: f64,
    pub exec_time: Micros,
    pub seed: u64,
}

impl SimWorld {
    pub fn new(n: usize, accuracy: f64, seed: u64) -> Self {
        let ground_truth = (0..n)
            .map(|i| {
                if i + 1 == n {
                    "terminate".to_string()
                } else {
                    format!("action {i}")
                }
            })
            .collect();
        SimWorld {
            n,
            ground_truth,
            accuracy,
            exec_time: Micros::ZERO,
            seed,
        }
    }

    pub fn with_exec_time(mut self, exec_time: Micros) -> Self {
        self.exec_time = exec_time;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n == 0 {
            return Err("n must be at least 1".into());
        }
        if self.ground_truth.len() != self.n {
            return Err("ground_truth must have n entries".into());
        }
        if !(0.0..=1.0).contains(&self.accuracy) {
            return Err(format!("accuracy must lie in [0, 1], got {}", self.accuracy));
        }
        Ok(())
    }

    pub fn task(&self) -> String {
        format!("simulated task (n={}, seed={})", self.n, self.seed)
    }

    /// One uniform draw per step index, shared by every accuracy level so
    /// that raising accuracy only ever turns wrong steps into right ones.
    pub fn draws(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.n).map(|_| rng.random::<f64>()).collect()
    }

    /// Indices whose approximation is correct (given a correct prefix).
    pub fn correct_mask(&self) -> Vec<bool> {
        self.draws().into_iter().map(|u| u < self.accuracy).collect()
    }

    pub fn profiles(&self, approx: &SimAgentSpec, target: &SimAgentSpec) -> Vec<StepProfile> {
        (0..self.n)
            .map(|i| StepProfile {
                time_a: approx.latency_at(i),
                time_t: target.latency_at(i),
                exec: self.exec_time,
                tok_a: approx.step_tokens,
                tok_t: target.step_tokens,
            })
            .collect()
    }

    fn on_track(&self, request: &StepRequest) -> bool {
        request.index < self.n
            && request
                .trajectory
                .entries
                .iter()
                .zip(&self.ground_truth)
                .all(|(e, g)| e.step.content == *g)
    }
}

/// Simulated agent. The target knows the ground truth but derails once its
/// prefix has left it; the approximation is right with the world's accuracy.
pub struct SimAgent {
    world: Arc<SimWorld>,
    spec: SimAgentSpec,
    correct: Vec<bool>,
}

impl SimAgent {
    pub fn new(world: Arc<SimWorld>, spec: SimAgentSpec) -> Self {
        let correct = match spec.role {
            AgentKind::Target => vec![true; world.n],
            AgentKind::Approximation => world.correct_mask(),
        };
        SimAgent {
            world,
            spec,
            correct,
        }
    }

    pub fn answer(&self, request: &StepRequest) -> String {
        let i = request.index;
        if self.world.on_track(request) && self.correct[i] {
            return self.world.ground_truth[i].clone();
        }
        match self.spec.role {
            AgentKind::Target => format!("derailed step {i}"),
            AgentKind::Approximation => format!("wrong step {i}"),
        }
    }
}

#[async_trait]
impl Agent for SimAgent {
    async fn propose(&self, request: &StepRequest) -> Result<StepExchange, AgentError> {
        let action = self.answer(request);
        Ok(StepExchange {
            prompt_tokens: request.trajectory.task_prompt.split_whitespace().count() as u64,
            completion_tokens: self.spec.step_tokens,
            latency: self.spec.latency_at(request.index),
            raw_text: format!("Action: {action}"),
            action,
        })
    }
}

/// Pure executor taking a fixed virtual duration per step.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimExecutor {
    pub exec_time: Micros,
}

#[async_trait]
impl Executor for SimExecutor {
    async fn execute(&self, step: &Step) -> Result<Observation, ExecutionError> {
        Ok(Observation {
            content: format!("ok: {}", step.content),
            exec_duration: self.exec_time,
        })
    }
}

pub fn make_sim_agents(
    world: &SimWorld,
    approx: &SimAgentSpec,
    target: &SimAgentSpec,
) -> (Arc<dyn Agent>, Arc<dyn Agent>) {
    let world = Arc::new(world.clone());
    let mut approx = approx.clone();
    approx.role = AgentKind::Approximation;
    let mut target = target.clone();
    target.role = AgentKind::Target;
    (
        Arc::new(SimAgent::new(world.clone(), approx)),
        Arc::new(SimAgent::new(world, target)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Source, Trajectory, TrajectoryEntry};

    fn request(world: &SimWorld, prefix: &[&str]) -> StepRequest {
        let entries = prefix
            .iter()
            .enumerate()
            .map(|(i, c)| TrajectoryEntry {
                step: Step::new(i, *c, Source::Target),
                observation: Observation::default(),
            })
            .collect();
        StepRequest {
            index: prefix.len(),
            task: world.task(),
            trajectory: Trajectory::new(&world.task(), entries),
        }
    }

    fn spec(role: AgentKind) -> SimAgentSpec {
        SimAgentSpec::new(role, Micros::from_secs(1), 1)
    }

    #[test]
    fn accuracy_extremes() {
        for (acc, right) in [(1.0, true), (0.0, false)] {
            let w = Arc::new(SimWorld::new(5, acc, 3));
            let a = SimAgent::new(w.clone(), spec(AgentKind::Approximation));
            let r = request(&w, &["action 0", "action 1"]);
            assert_eq!(a.answer(&r) == "action 2", right);
        }
    }

    #[test]
    fn target_derails_off_track() {
        let w = Arc::new(SimWorld::new(5, 1.0, 3));
        let t = SimAgent::new(w.clone(), spec(AgentKind::Target));
        assert_eq!(t.answer(&request(&w, &["action 0"])), "action 1");
        assert_eq!(t.answer(&request(&w, &["nope"])), "derailed step 1");
        assert_eq!(t.answer(&request(&w, &["action 0", "action 1", "action 2", "action 3"])), "terminate");
    }

    #[test]
    fn draws_are_reproducible_and_shared_across_accuracies() {
        let a = SimWorld::new(10, 0.3, 9);
        let b = SimWorld::new(10, 0.7, 9);
        assert_eq!(a.draws(), b.draws());
        for (x, y) in a.correct_mask().into_iter().zip(b.correct_mask()) {
            assert!(!x || y, "a step right at 0.3 must be right at 0.7");
        }
        assert_ne!(SimWorld::new(10, 0.5, 1).draws(), SimWorld::new(10, 0.5, 2).draws());
    }
}
