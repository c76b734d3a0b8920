//! Deterministic simulation: agents with known ground truth on a virtual
//! clock, an impatient simulated user, and parameter sweeps.

mod grid;
mod run;
mod world;

pub use grid::{
    run_accuracy_k_grid, run_interruption_study, run_speed_grid, BaselineRow, CellSummary,
    GridBase, GridResult, GridRow, Study,
};
pub use run::{
    approx_only, sim_config, simulate_run, simulate_with, target_only, ImpatienceModel,
    ImpatientUser, SimError, SimRun,
};
pub use world::{make_sim_agents, SimAgent, SimAgentSpec, SimExecutor, SimWorld};
