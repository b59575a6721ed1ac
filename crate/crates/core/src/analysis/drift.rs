//! Monte Carlo estimates with normal 99% intervals and the verdicts built
//! on them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::statistics::Statistics;

use super::constants::{lyapunov_delta, DriftConstants};
use super::episode::{BoundaryState, Episode, EpisodeSampler};
use super::AnalysisError;
use crate::engine::Simulation;
use crate::model::ModelParams;
use crate::policy::{Family, Policy, PolicySpec, SplitRule};

/// Two-sided 99% normal quantile.
pub const Z_99: f64 = 2.5758293035489004;

/// A sample mean with its 99% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        assert!(xs.len() >= 2, "an interval needs at least two samples");
        let mean = xs.iter().mean();
        let var = xs.iter().variance().max(0.0);
        let std_err = (var / xs.len() as f64).sqrt();
        Estimate {
            mean,
            std_err,
            lo: mean - Z_99 * std_err,
            hi: mean + Z_99 * std_err,
            count: xs.len(),
        }
    }

    /// Pass when the whole interval lies below `bound`, fail when it lies
    /// at or above it.
    pub fn verdict_below(&self, bound: f64) -> Verdict {
        if self.hi < bound {
            Verdict::Pass
        } else if self.lo >= bound {
            Verdict::Fail
        } else {
            Verdict::Inconclusive
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// Whether the smallest other queue is at most u (short interval) or
/// above it (long interval).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Short,
    Long,
    Mixed,
}

impl Regime {
    fn of(q_min: u64, u: f64) -> Self {
        if q_min as f64 <= u {
            Regime::Short
        } else {
            Regime::Long
        }
    }

    fn merge(self, other: Regime) -> Regime {
        if self == other {
            self
        } else {
            Regime::Mixed
        }
    }
}

/// Episodes sharing one LI server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub l: usize,
    pub q_min: u64,
    pub regime: Regime,
    pub episodes: usize,
    pub mean_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub state: BoundaryState,
    pub reps: usize,
    pub epsilon: f64,
    pub gamma: f64,
    /// L at the next sampling event minus L(α).
    pub mean_dl: Estimate,
    pub mean_dtau: Estimate,
    /// ΔL + εΔτ, per episode.
    pub margin: Estimate,
    pub regime: Regime,
    pub strata: Vec<Stratum>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrwReport {
    pub state: BoundaryState,
    pub reps: usize,
    /// Q_l(τ₁)^{1+γ}.
    pub lhs: Estimate,
    /// ([λ−μ_l]⁺)^{1+γ} Δ^{1+γ} + C Δ^{0.75(1+γ)}.
    pub rhs: Estimate,
    pub mean_dtau_pow: Estimate,
    pub mean_dtau_pow_075: Estimate,
    /// lhs − rhs, per episode.
    pub margin: Estimate,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub state: BoundaryState,
    pub reps: usize,
    /// One-slot change of L under PI-Split.
    pub mean_dl: Estimate,
    /// −ε.
    pub target: f64,
    /// −(max q)^γ + n(σ_a² + λ²).
    pub analytic_bound: f64,
    pub verdict: Verdict,
}

/// `reps` independent intervals from `state`, replica `r` for episode `r`.
pub fn sample_episodes(
    params: &ModelParams,
    state: &BoundaryState,
    reps: usize,
    seed: u64,
) -> Vec<Episode> {
    let sampler = EpisodeSampler::new(params);
    let reps32 = u32::try_from(reps).expect("too many replications");
    (0..reps32)
        .into_par_iter()
        .map(|r| sampler.sample(state, seed, r))
        .collect()
}

pub fn estimate_drift(
    alpha: &BoundaryState,
    params: &ModelParams,
    k: &DriftConstants,
    reps: usize,
    seed: u64,
) -> Result<DriftReport, AnalysisError> {
    alpha.check(k)?;
    let eps = sample_episodes(params, alpha, reps, seed);
    Ok(drift_from_episodes(alpha, k, &eps))
}

pub fn drift_from_episodes(alpha: &BoundaryState, k: &DriftConstants, eps: &[Episode]) -> DriftReport {
    let dl: Vec<f64> = eps
        .iter()
        .map(|e| lyapunov_delta(&alpha.q, &e.end, k.gamma))
        .collect();
    let dtau: Vec<f64> = eps.iter().map(|e| e.delta as f64).collect();
    let z: Vec<f64> = dl
        .iter()
        .zip(&dtau)
        .map(|(a, b)| a + k.epsilon * b)
        .collect();
    let mut strata: Vec<Stratum> = Vec::new();
    for (e, &zi) in eps.iter().zip(&z) {
        match strata.iter_mut().find(|s| s.l == e.l) {
            Some(s) => {
                s.episodes += 1;
                s.mean_margin += zi;
            }
            None => strata.push(Stratum {
                l: e.l,
                q_min: e.q_min,
                regime: Regime::of(e.q_min, k.u),
                episodes: 1,
                mean_margin: zi,
            }),
        }
    }
    strata.sort_by_key(|s| s.l);
    for s in &mut strata {
        s.mean_margin /= s.episodes as f64;
    }
    let regime = strata
        .iter()
        .map(|s| s.regime)
        .reduce(Regime::merge)
        .expect("no episodes");
    let margin = Estimate::from_samples(&z);
    DriftReport {
        state: alpha.clone(),
        reps: eps.len(),
        epsilon: k.epsilon,
        gamma: k.gamma,
        mean_dl: Estimate::from_samples(&dl),
        mean_dtau: Estimate::from_samples(&dtau),
        margin,
        regime,
        strata,
        verdict: margin.verdict_below(0.0),
    }
}

pub fn check_rrw_bound(
    alpha: &BoundaryState,
    params: &ModelParams,
    k: &DriftConstants,
    reps: usize,
    seed: u64,
) -> Result<RrwReport, AnalysisError> {
    alpha.check(k)?;
    let eps = sample_episodes(params, alpha, reps, seed);
    Ok(rrw_from_episodes(alpha, k, &eps))
}

pub fn rrw_from_episodes(alpha: &BoundaryState, k: &DriftConstants, eps: &[Episode]) -> RrwReport {
    let p = 1.0 + k.gamma;
    let mut lhs = Vec::with_capacity(eps.len());
    let mut rhs = Vec::with_capacity(eps.len());
    let mut d_pow = Vec::with_capacity(eps.len());
    let mut d_pow75 = Vec::with_capacity(eps.len());
    for e in eps {
        let d = e.delta as f64;
        let b = k.beta[e.l].max(0.0);
        lhs.push((e.end[e.l] as f64).powf(p));
        d_pow.push(d.powf(p));
        d_pow75.push(d.powf(0.75 * p));
        rhs.push(b.powf(p) * d.powf(p) + k.c_rrw * d.powf(0.75 * p));
    }
    let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let margin = Estimate::from_samples(&diff);
    RrwReport {
        state: alpha.clone(),
        reps: eps.len(),
        lhs: Estimate::from_samples(&lhs),
        rhs: Estimate::from_samples(&rhs),
        mean_dtau_pow: Estimate::from_samples(&d_pow),
        mean_dtau_pow_075: Estimate::from_samples(&d_pow75),
        margin,
        // The bound allows equality.
        verdict: if margin.hi <= 0.0 {
            Verdict::Pass
        } else if margin.lo > 0.0 {
            Verdict::Fail
        } else {
            Verdict::Inconclusive
        },
    }
}

/// One slot of PI-Split from `alpha`, repeated `reps` times.
pub fn check_pisplit_onestep(
    alpha: &BoundaryState,
    params: &ModelParams,
    k: &DriftConstants,
    reps: usize,
    seed: u64,
) -> Result<SplitReport, AnalysisError> {
    alpha.check(k)?;
    let found = alpha.idle_non_li();
    if found < 2 {
        return Err(AnalysisError::TooFewIdle { needed: 2, found });
    }
    let reps32 = u32::try_from(reps).expect("too many replications");
    let dl: Vec<f64> = (0..reps32)
        .into_par_iter()
        .map(|r| {
            let policy = Policy::new(PolicySpec::new(Family::Pi, true))
                .with_split_rule(SplitRule::EvenSplit);
            let mut sim =
                Simulation::from_state_replica(params.clone(), policy, seed, r, alpha.system_state());
            sim.step();
            lyapunov_delta(&alpha.q, &sim.state().q, k.gamma)
        })
        .collect();
    let mean_dl = Estimate::from_samples(&dl);
    let q_star = *alpha.q.iter().max().unwrap() as f64;
    let n = k.n as f64;
    Ok(SplitReport {
        state: alpha.clone(),
        reps,
        mean_dl,
        target: -k.epsilon,
        analytic_bound: -q_star.powf(k.gamma) + n * (k.sigma_a * k.sigma_a + k.lambda * k.lambda),
        verdict: mean_dl.verdict_below(-k.epsilon),
    })
}
