//! Parameter sweeps over simulated runs, parallel across cells.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{summarize, Summary};
use crate::time::Micros;
use crate::types::AgentKind;

use super::run::{
    approx_only, sim_config, simulate_run, simulate_with, target_only, ImpatienceModel,
    ImpatientUser, SimError, SimRun,
};
use super::world::{SimAgentSpec, SimWorld};

/// Shared constants of a sweep. Defaults: 10 steps, approximation 2 s and
/// 10 tokens per step, target 8 s and 20 tokens, no execution time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridBase {
    pub n: usize,
    pub time_a: Micros,
    pub time_t: Micros,
    pub tok_a: u64,
    pub tok_t: u64,
    pub exec: Micros,
    /// Seed of the first repetition; repetition `s` uses `seed + s`.
    pub seed: u64,
}

impl Default for GridBase {
    fn default() -> Self {
        GridBase {
            n: 10,
            time_a: Micros::from_secs(2),
            time_t: Micros::from_secs(8),
            tok_a: 10,
            tok_t: 20,
            exec: Micros::ZERO,
            seed: 0,
        }
    }
}

impl GridBase {
    pub fn world(&self, accuracy: f64, seed: u64) -> SimWorld {
        SimWorld::new(self.n, accuracy, seed).with_exec_time(self.exec)
    }

    pub fn approx_spec(&self) -> SimAgentSpec {
        SimAgentSpec::new(AgentKind::Approximation, self.time_a, self.tok_a)
    }

    pub fn target_spec(&self) -> SimAgentSpec {
        SimAgentSpec::new(AgentKind::Target, self.time_t, self.tok_t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    AccuracyK,
    Speed,
    Interruption,
}

/// One simulated run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub accuracy: f64,
    pub k: usize,
    /// Approximation step latency in seconds.
    pub speed: f64,
    pub interrupts: usize,
    pub accepted_interrupts: usize,
    pub seed: u64,
    pub tt: f64,
    pub st: f64,
    pub to: f64,
    pub so: f64,
    pub mc: f64,
}

impl GridRow {
    fn from_run(run: &SimRun, accuracy: f64, k: usize, speed: Micros, interrupts: usize, seed: u64) -> Self {
        GridRow {
            accuracy,
            k,
            speed: speed.as_secs_f64(),
            interrupts,
            accepted_interrupts: run.accepted_interrupts,
            seed,
            tt: run.metrics.tt,
            st: run.metrics.st,
            to: run.metrics.to,
            so: run.metrics.so,
            mc: run.metrics.mc,
        }
    }
}

/// Single-agent reference runs for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub seed: u64,
    pub approx_only_tt: f64,
    pub approx_only_to: f64,
    pub target_only_tt: f64,
    pub target_only_to: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub study: Study,
    pub rows: Vec<GridRow>,
    pub baselines: Vec<BaselineRow>,
}

/// Mean/std of the per-run metrics of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub key: Vec<f64>,
    pub runs: usize,
    pub tt: Summary,
    pub st: Summary,
    pub to: Summary,
    pub so: Summary,
    pub mc: Summary,
}

impl GridResult {
    fn key_columns(&self) -> &'static [&'static str] {
        match self.study {
            Study::AccuracyK => &["accuracy", "k"],
            Study::Speed => &["accuracy", "speed"],
            Study::Interruption => &["interrupts"],
        }
    }

    fn key(&self, r: &GridRow) -> Vec<f64> {
        match self.study {
            Study::AccuracyK => vec![r.accuracy, r.k as f64],
            Study::Speed => vec![r.accuracy, r.speed],
            Study::Interruption => vec![r.interrupts as f64],
        }
    }

    /// Cells in first-appearance order.
    pub fn cells(&self) -> Vec<CellSummary> {
        let mut keys: Vec<Vec<f64>> = Vec::new();
        for r in &self.rows {
            let k = self.key(r);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|key| {
                let members: Vec<&GridRow> = self.rows.iter().filter(|r| self.key(r) == key).collect();
                let col = |f: fn(&GridRow) -> f64| summarize(&members.iter().map(|r| f(r)).collect::<Vec<_>>());
                CellSummary {
                    runs: members.len(),
                    tt: col(|r| r.tt),
                    st: col(|r| r.st),
                    to: col(|r| r.to),
                    so: col(|r| r.so),
                    mc: col(|r| r.mc),
                    key,
                }
            })
            .collect()
    }

    pub fn raw_csv(&self) -> String {
        let mut out = self.key_columns().join(",");
        out.push_str(",seed,accepted_interrupts,TT,ST,TO,SO,MC\n");
        for r in &self.rows {
            let key: Vec<String> = self.key(r).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                key.join(","),
                r.seed,
                r.accepted_interrupts,
                r.tt,
                r.st,
                r.to,
                r.so,
                r.mc
            );
        }
        out
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = self.key_columns().join(",");
        out.push_str(",runs,TT_mean,TT_std,ST_mean,ST_std,TO_mean,TO_std,SO_mean,SO_std,MC_mean,MC_std\n");
        for c in self.cells() {
            let key: Vec<String> = c.key.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                key.join(","),
                c.runs,
                c.tt.mean,
                c.tt.std,
                c.st.mean,
                c.st.std,
                c.to.mean,
                c.to.std,
                c.so.mean,
                c.so.std,
                c.mc.mean,
                c.mc.std
            );
        }
        out
    }

    pub fn baselines_csv(&self) -> String {
        let mut out = String::from("seed,approx_only_TT,approx_only_TO,target_only_TT,target_only_TO\n");
        for b in &self.baselines {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                b.seed, b.approx_only_tt, b.approx_only_to, b.target_only_tt, b.target_only_to
            );
        }
        out
    }
}

fn baselines(base: &GridBase, seeds: usize) -> Result<Vec<BaselineRow>, SimError> {
    (0..seeds as u64)
        .into_par_iter()
        .map(|s| {
            let seed = base.seed + s;
            let world = base.world(1.0, seed);
            let a = approx_only(&world, &base.approx_spec())?;
            let t = target_only(&world, &base.target_spec())?;
            Ok(BaselineRow {
                seed,
                approx_only_tt: a.metrics.tt,
                approx_only_to: a.metrics.to,
                target_only_tt: t.metrics.tt,
                target_only_to: t.metrics.to,
            })
        })
        .collect()
}

/// Accuracy x k sweep with `seeds` repetitions per cell, plus single-agent
/// baselines per seed.
pub fn run_accuracy_k_grid(
    base: &GridBase,
    accuracies: &[f64],
    ks: &[usize],
    seeds: usize,
) -> Result<GridResult, SimError> {
    let cells: Vec<(f64, usize, u64)> = accuracies
        .iter()
        .flat_map(|&a| ks.iter().flat_map(move |&k| (0..seeds as u64).map(move |s| (a, k, s))))
        .collect();
    let rows = cells
        .into_par_iter()
        .map(|(acc, k, s)| {
            let seed = base.seed + s;
            let run = simulate_run(&base.world(acc, seed), &base.approx_spec(), &base.target_spec(), k)?;
            Ok(GridRow::from_run(&run, acc, k, base.time_a, 0, seed))
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let baselines = if rows.is_empty() { Vec::new() } else { baselines(base, seeds)? };
    Ok(GridResult {
        study: Study::AccuracyK,
        rows,
        baselines,
    })
}

/// Approximation speed x accuracy sweep at fixed `k`.
pub fn run_speed_grid(
    base: &GridBase,
    speeds: &[Micros],
    accuracies: &[f64],
    k: usize,
    seeds: usize,
) -> Result<GridResult, SimError> {
    let cells: Vec<(Micros, f64, u64)> = speeds
        .iter()
        .flat_map(|&v| accuracies.iter().flat_map(move |&a| (0..seeds as u64).map(move |s| (v, a, s))))
        .collect();
    let rows = cells
        .into_par_iter()
        .map(|(speed, acc, s)| {
            let seed = base.seed + s;
            let mut approx = base.approx_spec();
            approx.step_latency = speed;
            let run = simulate_run(&base.world(acc, seed), &approx, &base.target_spec(), k)?;
            Ok(GridRow::from_run(&run, acc, k, speed, 0, seed))
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(GridResult {
        study: Study::Speed,
        rows,
        baselines: Vec::new(),
    })
}

/// Interrupt budget sweep: simulation `s` of every count shares world and
/// user seeds, so counts differ only in how many interrupts are allowed.
pub fn run_interruption_study(
    base: &GridBase,
    accuracy: f64,
    k: usize,
    model: ImpatienceModel,
    interrupt_counts: &[usize],
    sims_per_count: usize,
) -> Result<GridResult, SimError> {
    model.validate(base.time_t).map_err(SimError::Invalid)?;
    let cells: Vec<(usize, u64)> = interrupt_counts
        .iter()
        .flat_map(|&c| (0..sims_per_count as u64).map(move |s| (c, s)))
        .collect();
    let rows = cells
        .into_par_iter()
        .map(|(count, s)| {
            let seed = base.seed + s;
            let world = base.world(accuracy, seed);
            let user = ImpatientUser::new(
                ImpatienceModel {
                    max_interrupts: count,
                    ..model
                },
                &world,
                seed ^ 0x5eed,
            );
            let run = simulate_with(
                &world,
                &base.approx_spec(),
                &base.target_spec(),
                sim_config(&world, k),
                Some(Box::new(user)),
            )?;
            Ok(GridRow::from_run(&run, accuracy, k, base.time_a, count, seed))
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(GridResult {
        study: Study::Interruption,
        rows,
        baselines: Vec::new(),
    })
}
