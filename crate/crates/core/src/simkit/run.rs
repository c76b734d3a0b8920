use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytics::{measure_log, MetricsReport, PriceTable, StepProfile};
use crate::config::EngineConfig;
use crate::engine::{run_sequential, EngineError, PlanResult, VirtualDriver, VirtualUser};
use crate::events::{Event, EventKind, WindowKind};
use crate::presentation::{InterruptError, InterruptKind, UserInterrupt};
use crate::time::Micros;
use crate::types::AgentKind;

use super::world::{make_sim_agents, SimAgentSpec, SimExecutor, SimWorld};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    Invalid(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// A finished simulated run.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub result: PlanResult,
    pub metrics: MetricsReport,
    pub profiles: Vec<StepProfile>,
    /// Interrupts the simulated user got accepted.
    pub accepted_interrupts: usize,
}

/// Engine config used for simulated runs: plan length capped at `n`.
pub fn sim_config(world: &SimWorld, k: usize) -> EngineConfig {
    EngineConfig {
        max_steps: world.n,
        ..EngineConfig::simulated(k)
    }
}

fn validate(world: &SimWorld, approx: &SimAgentSpec, target: &SimAgentSpec) -> Result<(), SimError> {
    world.validate().map_err(SimError::Invalid)?;
    approx.validate().map_err(SimError::Invalid)?;
    target.validate().map_err(SimError::Invalid)
}

pub fn simulate_run(
    world: &SimWorld,
    approx: &SimAgentSpec,
    target: &SimAgentSpec,
    k: usize,
) -> Result<SimRun, SimError> {
    simulate_with(world, approx, target, sim_config(world, k), None)
}

/// Simulated run with a simulated user and an explicit engine config.
pub fn simulate_with(
    world: &SimWorld,
    approx: &SimAgentSpec,
    target: &SimAgentSpec,
    config: EngineConfig,
    user: Option<Box<dyn VirtualUser>>,
) -> Result<SimRun, SimError> {
    validate(world, approx, target)?;
    let (a, t) = make_sim_agents(world, approx, target);
    let executor = Arc::new(SimExecutor {
        exec_time: world.exec_time,
    });
    let mut driver = VirtualDriver::new(world.task(), a, t, executor, config);
    if let Some(user) = user {
        driver = driver.with_user(user);
    }
    let (result, acks) = futures::executor::block_on(driver.run_detailed())?;
    let metrics = measure_log(&result.events, &PriceTable::default());
    Ok(SimRun {
        metrics,
        profiles: world.profiles(approx, target),
        accepted_interrupts: acks.iter().filter(|(_, r)| r.is_ok()).count(),
        result,
    })
}

/// Target-only plan: the latency upper bound.
pub fn target_only(world: &SimWorld, target: &SimAgentSpec) -> Result<SimRun, SimError> {
    baseline(world, target, AgentKind::Target)
}

/// Approximation-only plan with a perfectly accurate approximation: the
/// latency lower bound.
pub fn approx_only(world: &SimWorld, approx: &SimAgentSpec) -> Result<SimRun, SimError> {
    let perfect = SimWorld {
        accuracy: 1.0,
        ..world.clone()
    };
    baseline(&perfect, approx, AgentKind::Approximation)
}

fn baseline(world: &SimWorld, spec: &SimAgentSpec, kind: AgentKind) -> Result<SimRun, SimError> {
    validate(world, spec, spec)?;
    let (a, t) = make_sim_agents(world, spec, spec);
    let agent = match kind {
        AgentKind::Approximation => a,
        AgentKind::Target => t,
    };
    let executor = SimExecutor {
        exec_time: world.exec_time,
    };
    let config = sim_config(world, 1);
    let result = futures::executor::block_on(run_sequential(
        &world.task(),
        agent.as_ref(),
        kind,
        &executor,
        &config,
    ))?;
    let metrics = measure_log(&result.events, &PriceTable::default());
    Ok(SimRun {
        metrics,
        profiles: world.profiles(spec, spec),
        accepted_interrupts: 0,
        result,
    })
}

/// How an impatient simulated user behaves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpatienceModel {
    pub max_interrupts: usize,
    pub wait_low: Micros,
    pub wait_high: Micros,
}

impl Default for ImpatienceModel {
    fn default() -> Self {
        ImpatienceModel {
            max_interrupts: 0,
            wait_low: Micros::from_secs(1),
            wait_high: Micros::from_secs(5),
        }
    }
}

impl ImpatienceModel {
    pub fn validate(&self, target_latency: Micros) -> Result<(), String> {
        if self.wait_low == Micros::ZERO || self.wait_low > self.wait_high {
            return Err("need 0 < wait_low <= wait_high".into());
        }
        if self.wait_high >= target_latency {
            return Err("wait_high must be below the target step latency".into());
        }
        Ok(())
    }
}

/// Watches for latency windows and, after a uniform delay, supplies the
/// correct step itself. Only accepted interrupts count against the budget.
pub struct ImpatientUser {
    model: ImpatienceModel,
    ground_truth: Vec<String>,
    rng: ChaCha8Rng,
    accepted: usize,
    in_flight: usize,
}

impl ImpatientUser {
    pub fn new(model: ImpatienceModel, world: &SimWorld, seed: u64) -> Self {
        ImpatientUser {
            model,
            ground_truth: world.ground_truth.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            accepted: 0,
            in_flight: 0,
        }
    }
}

impl VirtualUser for ImpatientUser {
    fn observe(&mut self, event: &Event) -> Vec<(Micros, UserInterrupt)> {
        if event.kind != EventKind::WindowOpen || event.window != Some(WindowKind::Latency) {
            return Vec::new();
        }
        if self.accepted + self.in_flight >= self.model.max_interrupts {
            return Vec::new();
        }
        let Some(content) = self.ground_truth.get(event.index) else {
            return Vec::new();
        };
        let (lo, hi) = (self.model.wait_low.0, self.model.wait_high.0);
        let delay = Micros(self.rng.random_range(lo..=hi));
        self.in_flight += 1;
        vec![(
            event.t + delay,
            UserInterrupt {
                kind: InterruptKind::LatencyOverride,
                index: event.index,
                content: content.clone(),
                received_at: event.t + delay,
            },
        )]
    }

    fn acknowledge(&mut self, _interrupt: &UserInterrupt, result: &Result<(), InterruptError>) {
        self.in_flight -= 1;
        if result.is_ok() {
            self.accepted += 1;
        }
    }
}
