//! Drift lab: the constants of the stability argument, exact sampling of
//! one inter-sampling interval from a boundary state, and Monte Carlo
//! checks of the inequalities the argument rests on.

mod catalog;
mod constants;
mod drift;
mod episode;

pub use catalog::{
    boundary_catalog, desk_scenarios, run_drift_lab, split_catalog, CellReport, DeskScenario,
    DriftLabReport,
};
pub use constants::{
    c_set_bound, compute_constants, f_poly, gamma_condition, lyapunov, lyapunov_delta, pow_diff,
    DriftConstants,
};
pub use drift::{
    check_pisplit_onestep, check_rrw_bound, drift_from_episodes, estimate_drift, rrw_from_episodes,
    sample_episodes, DriftReport, Estimate, Regime, RrwReport, SplitReport, Stratum, Verdict, Z_99,
};
pub use episode::{engine_episode, BoundaryState, Episode, EpisodeSampler};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("supercritical: lambda = {lambda} is not below total capacity {capacity}")]
    Supercritical { lambda: f64, capacity: f64 },
    #[error("the drift argument needs at least two servers")]
    SingleServer,
    #[error("state inside finite set: total {total} <= threshold {threshold}")]
    InsideFiniteSet { total: u64, threshold: f64 },
    #[error("not a boundary state: no empty queue other than LI")]
    NotBoundary,
    #[error("needs {needed} empty queues other than LI, found {found}")]
    TooFewIdle { needed: usize, found: usize },
    #[error("no threshold u found in floating point range")]
    NoThreshold,
    #[error("threshold {0:e} leaves no room for states in 64-bit queues")]
    Unrepresentable(f64),
    #[error("state and model disagree on the number of servers")]
    WrongSize,
}
