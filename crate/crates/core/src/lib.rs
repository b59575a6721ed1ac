//! Discrete-time simulation of a dispatcher routing batches of jobs to
//! parallel servers.
//!
//! The main entry points:
//!
//! - [`engine::run`] runs one policy on one model,
//! - [`analysis::run_drift_lab`] estimates interval drift from boundary states,
//! - [`experiment::run_experiment`] sweeps loads and policies and writes CSV/JSON.
//!
//! ```
//! use persistent_idle::dist::DistSpec;
//! use persistent_idle::engine::{run, RunOptions};
//! use persistent_idle::model::ModelParams;
//! use persistent_idle::policy::{Family, Policy, PolicySpec};
//!
//! let params = ModelParams::new(
//!     DistSpec::poisson(2.0).unwrap(),
//!     vec![DistSpec::uniform_int(1, 2).unwrap(); 3],
//! )
//! .unwrap();
//! let out = run(&params, Policy::new(PolicySpec::new(Family::Pi, false)), 10_000, 42, RunOptions::default());
//! assert!(out.summary.avg_total_queue < 50.0);
//! ```

pub mod dist;
pub mod model;
pub mod rng;
pub mod policy;
pub mod engine;
pub mod jobs;
pub mod metrics;
pub mod analysis;
pub mod experiment;

// Book chapters, compiled so their snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/policies.md")]
    mod policies {}
    #[doc = include_str!("../../../book/src/tokens.md")]
    mod tokens {}
    #[doc = include_str!("../../../book/src/water-filling.md")]
    mod water_filling {}
    #[doc = include_str!("../../../book/src/drift-lab.md")]
    mod drift_lab {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
