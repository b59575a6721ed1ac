//! Model parameters and the per-slot state of the system.
//!
//! Server indices are 0-based in code. Anything printed for people
//! (`Display`, CSV, JSON) uses 1-based indices.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::DistSpec;

/// Relative tolerance when comparing stored moments with the closed forms.
const MOMENT_TOL: f64 = 1e-9;

/// Arrival and capacity distributions plus their derived moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: usize,
    pub arrival: DistSpec,
    pub capacities: Vec<DistSpec>,
    pub s_max: u64,
    pub lambda: f64,
    pub sigma_a: f64,
    pub mu: Vec<f64>,
    pub sigma_s: Vec<f64>,
}

/// One broken invariant of [`ModelParams`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("at least one server required")]
    NoServers,
    #[error("expected {expected} capacity distributions, found {found}")]
    CapacityCount { expected: usize, found: usize },
    #[error("server {server}: capacity below 1")]
    CapacityBelowOne { server: usize },
    #[error("server {server}: capacity distribution is unbounded")]
    CapacityUnbounded { server: usize },
    #[error("server {server}: capacity above s_max")]
    CapacityAboveSmax { server: usize },
    #[error("server {server}: mean capacity outside [1, s_max]")]
    MeanOutOfRange { server: usize },
    #[error("zero-arrival probability required")]
    ZeroArrivalProbabilityRequired,
    #[error("{what} does not match its distribution")]
    MomentMismatch { what: String },
    #[error("invalid distribution: {0}")]
    BadDistribution(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid model: {}", list(.0))]
pub struct ModelError(pub Vec<Violation>);

fn list(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= MOMENT_TOL * a.abs().max(b.abs()).max(1.0)
}

impl ModelParams {
    /// Fills in the derived fields without checking anything. `s_max` is
    /// the largest value any capacity distribution can take (0 if one of
    /// them is unbounded).
    pub fn from_parts(arrival: DistSpec, capacities: Vec<DistSpec>) -> Self {
        let am = arrival.moments();
        let s_max = capacities
            .iter()
            .map(|c| c.support().1.unwrap_or(0))
            .max()
            .unwrap_or(0);
        ModelParams {
            n: capacities.len(),
            arrival,
            s_max,
            lambda: am.mean,
            sigma_a: am.std_dev(),
            mu: capacities.iter().map(|c| c.moments().mean).collect(),
            sigma_s: capacities.iter().map(|c| c.moments().std_dev()).collect(),
            capacities,
        }
    }

    /// Builds and validates.
    pub fn new(arrival: DistSpec, capacities: Vec<DistSpec>) -> Result<Self, ModelError> {
        let p = Self::from_parts(arrival, capacities);
        validate(&p).map_err(ModelError)?;
        Ok(p)
    }

    pub fn total_service_rate(&self) -> f64 {
        self.mu.iter().sum()
    }

    /// λ / Σμ.
    pub fn load(&self) -> f64 {
        self.lambda / self.total_service_rate()
    }

    pub fn mu_min(&self) -> f64 {
        self.mu.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Lists every invariant of `params` that fails.
pub fn validate(params: &ModelParams) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if params.n == 0 {
        out.push(Violation::NoServers);
    }
    if params.capacities.len() != params.n {
        out.push(Violation::CapacityCount {
            expected: params.n,
            found: params.capacities.len(),
        });
    }
    if let Err(e) = params.arrival.check() {
        out.push(Violation::BadDistribution(e.to_string()));
    }
    if params.arrival.pmf(0) <= 0.0 {
        out.push(Violation::ZeroArrivalProbabilityRequired);
    }
    let am = params.arrival.moments();
    if !close(am.mean, params.lambda) {
        out.push(Violation::MomentMismatch {
            what: "lambda".into(),
        });
    }
    if !close(am.std_dev(), params.sigma_a) {
        out.push(Violation::MomentMismatch {
            what: "sigma_a".into(),
        });
    }
    for (i, c) in params.capacities.iter().enumerate() {
        let server = i + 1;
        if let Err(e) = c.check() {
            out.push(Violation::BadDistribution(e.to_string()));
            continue;
        }
        let (lo, hi) = c.support();
        if lo < 1 {
            out.push(Violation::CapacityBelowOne { server });
        }
        match hi {
            None => out.push(Violation::CapacityUnbounded { server }),
            Some(hi) if hi > params.s_max => out.push(Violation::CapacityAboveSmax { server }),
            _ => {}
        }
        let m = c.moments();
        if !(1.0..=params.s_max as f64).contains(&m.mean) {
            out.push(Violation::MeanOutOfRange { server });
        }
        if params.mu.get(i).is_none_or(|&mu| !close(mu, m.mean)) {
            out.push(Violation::MomentMismatch {
                what: format!("mu[{server}]"),
            });
        }
        if params
            .sigma_s
            .get(i)
            .is_none_or(|&s| !close(s, m.std_dev()))
        {
            out.push(Violation::MomentMismatch {
                what: format!("sigma_s[{server}]"),
            });
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// The Markov state at the end of a slot: queue lengths, the Last-Idle
/// server, where the tokens are, and the slot counter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemState {
    pub q: Vec<u64>,
    pub li: usize,
    /// `dispatcher_tokens[i]` is true when server `i`'s token sits at the
    /// dispatcher.
    pub dispatcher_tokens: Vec<bool>,
    pub slot: u64,
}

impl SystemState {
    /// All queues empty, every token at the dispatcher.
    pub fn empty(n: usize, li: usize) -> Self {
        Self::with_queues(vec![0; n], li)
    }

    /// Queues `q` at slot 0 with tokens placed consistently.
    pub fn with_queues(q: Vec<u64>, li: usize) -> Self {
        assert!(li < q.len(), "li out of range");
        let dispatcher_tokens = q.iter().map(|&x| x == 0).collect();
        SystemState {
            q,
            li,
            dispatcher_tokens,
            slot: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn total(&self) -> u64 {
        self.q.iter().sum()
    }

    pub fn idle_set(&self) -> Vec<usize> {
        idle_set(self)
    }

    /// Servers whose token is at the dispatcher.
    pub fn tokens(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.dispatcher_tokens[i])
            .collect()
    }

    /// Some server other than LI is idle.
    pub fn is_sampling_state(&self) -> bool {
        self.q
            .iter()
            .enumerate()
            .any(|(i, &x)| x == 0 && i != self.li)
    }
}

impl fmt::Display for SystemState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} q=(", self.slot)?;
        for (i, x) in self.q.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{x}")?;
        }
        write!(f, ") li={}", self.li + 1)
    }
}

/// Indices of the empty queues, in increasing order.
pub fn idle_set(state: &SystemState) -> Vec<usize> {
    state
        .q
        .iter()
        .enumerate()
        .filter(|(_, &x)| x == 0)
        .map(|(i, _)| i)
        .collect()
}

/// How one batch is spread over the servers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Allocation {
    pub counts: Vec<u64>,
}

impl Allocation {
    pub fn zeros(n: usize) -> Self {
        Allocation { counts: vec![0; n] }
    }

    /// The whole batch on one server.
    pub fn single(n: usize, server: usize, batch: u64) -> Self {
        let mut a = Self::zeros(n);
        a.counts[server] = batch;
        a
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Number of servers that receive at least one job.
    pub fn sub_batches(&self) -> u64 {
        self.counts.iter().filter(|&&c| c > 0).count() as u64
    }
}

/// One job, for completion-time bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub arrival_slot: u64,
    pub server: usize,
    pub position_in_batch: u64,
    pub completion_slot: Option<u64>,
}

/// A run of consecutive jobs (same batch, same server) that finished in
/// the same slot. Job ids in the run are `first_id..first_id + count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletedRun {
    pub server: usize,
    pub first_id: u64,
    pub count: u64,
    pub arrival_slot: u64,
    pub first_position: u64,
}

impl CompletedRun {
    pub fn job_ids(&self) -> std::ops::Range<u64> {
        self.first_id..self.first_id + self.count
    }
}

/// Everything that happened in one slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotEvents {
    pub slot: u64,
    pub batch_size: u64,
    pub allocation: Allocation,
    /// Realized service capacities s_i(t).
    pub capacities: Vec<u64>,
    pub departures: Vec<u64>,
    pub completed: Vec<CompletedRun>,
    pub tokens_sent: u64,
    /// Messages charged to the policy this slot: tokens for token-based
    /// policies, queue-length probes for the JSQ family.
    pub messages: u64,
    /// LI at the end of the slot.
    pub li: usize,
    pub is_sampling_event: bool,
}

impl SlotEvents {
    pub fn completed_jobs(&self) -> impl Iterator<Item = u64> + '_ {
        self.completed.iter().flat_map(CompletedRun::job_ids)
    }

    pub fn completed_count(&self) -> u64 {
        self.completed.iter().map(|r| r.count).sum()
    }
}
