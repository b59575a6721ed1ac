//! The constants behind the drift argument and the Lyapunov function.

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::model::ModelParams;

/// Points on the coarse γ grid.
const GAMMA_GRID: u32 = 400;
/// Width at which γ bisection stops.
const GAMMA_TOL: f64 = 1e-6;
/// Relative width at which the u bisection stops.
const U_TOL: f64 = 1e-9;
/// Points in the grid that confirms f < 0 beyond u/s_max.
const U_CONFIRM_POINTS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftConstants {
    /// Σμ − λ.
    pub epsilon0: f64,
    /// (ε₀ ∧ μ_min) / 4.
    pub epsilon: f64,
    pub gamma: f64,
    /// Constant of the reflected-walk moment bound.
    pub c_rrw: f64,
    pub u: f64,
    /// Threshold 𝒞 of the finite set A = {Σ q ≤ 𝒞}.
    pub c_set: f64,
    /// β_i = λ − μ_i.
    pub beta: Vec<f64>,
    /// σ_i = sqrt(σ_a² + σ_{s_i}²).
    pub sigma_comb: Vec<f64>,
    pub n: usize,
    pub s_max: u64,
    pub lambda: f64,
    pub sigma_a: f64,
}

/// max_j { ([λ−μ_j]⁺)^{1+γ} − Σ_{i≠j} μ_i }.
pub fn gamma_condition(params: &ModelParams, gamma: f64) -> f64 {
    let total: f64 = params.mu.iter().sum();
    params
        .mu
        .iter()
        .map(|&mu| (params.lambda - mu).max(0.0).powf(1.0 + gamma) - (total - mu))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// f(x) = εx − 2εx^{1+γ} + Cx^{0.75(1+γ)} + (n−1)s_max x^γ.
pub fn f_poly(k: &DriftConstants, x: f64) -> f64 {
    let g = k.gamma;
    k.epsilon * x - 2.0 * k.epsilon * x.powf(1.0 + g)
        + k.c_rrw * x.powf(0.75 * (1.0 + g))
        + (k.n as f64 - 1.0) * k.s_max as f64 * x.powf(g)
}

/// f(x) / x^{1+γ}. Every term has a negative power of x and a nonnegative
/// coefficient, so this is strictly decreasing on x > 0.
fn f_scaled(k: &DriftConstants, x: f64) -> f64 {
    let g = k.gamma;
    k.epsilon * x.powf(-g) - 2.0 * k.epsilon
        + k.c_rrw * x.powf(-0.25 * (1.0 + g))
        + (k.n as f64 - 1.0) * k.s_max as f64 / x
}

/// The right-hand side that 𝒞 must exceed.
pub fn c_set_bound(k: &DriftConstants) -> f64 {
    let n = k.n as f64;
    let g = k.gamma;
    let beta_max = k.beta.iter().copied().fold(0.0f64, f64::max);
    let short = k.epsilon * k.u
        + beta_max.powf(1.0 + g) * k.u.powf(1.0 + g)
        + k.c_rrw * k.u.powf(0.75 * (1.0 + g));
    let split = k.epsilon + n * (k.sigma_a * k.sigma_a + k.lambda * k.lambda);
    n * k.s_max as f64 * k.u + n * short.powf(1.0 / g) + n * split.powf(1.0 / g)
}

pub fn compute_constants(params: &ModelParams) -> Result<DriftConstants, AnalysisError> {
    let total: f64 = params.mu.iter().sum();
    if params.lambda >= total {
        return Err(AnalysisError::Supercritical {
            lambda: params.lambda,
            capacity: total,
        });
    }
    if params.n < 2 {
        return Err(AnalysisError::SingleServer);
    }
    let epsilon0 = total - params.lambda;
    let epsilon = epsilon0.min(params.mu_min()) / 4.0;
    let gamma = search_gamma(params, epsilon);
    let beta: Vec<f64> = params.mu.iter().map(|&mu| params.lambda - mu).collect();
    let sigma_comb: Vec<f64> = params
        .sigma_s
        .iter()
        .map(|&s| (params.sigma_a * params.sigma_a + s * s).sqrt())
        .collect();
    let c_rrw = sigma_comb
        .iter()
        .zip(&beta)
        .map(|(&s, &b)| (16.0 * s + 8.0 * s.sqrt() * b.max(0.0)).powf((1.0 + gamma) / 2.0))
        .fold(0.0f64, f64::max);
    let mut k = DriftConstants {
        epsilon0,
        epsilon,
        gamma,
        c_rrw,
        u: 0.0,
        c_set: 0.0,
        beta,
        sigma_comb,
        n: params.n,
        s_max: params.s_max,
        lambda: params.lambda,
        sigma_a: params.sigma_a,
    };
    k.u = search_u(&k)?;
    let bound = c_set_bound(&k);
    // Above 2^53 the margin of 1 vanishes in rounding.
    k.c_set = if bound + 1.0 > bound {
        bound + 1.0
    } else {
        bound * (1.0 + 2.0 * f64::EPSILON)
    };
    Ok(k)
}

/// Largest γ on the descending grid k/400 with h(γ) < −2ε, refined by
/// bisection against the next grid point up. Below the first grid point
/// the step is halved until an admissible γ appears. One exists when
/// n ≥ 2: each term of h(0) is either λ − Σμ or −Σ_{i≠j} μ_i ≤ −μ_min, so
/// h(0) ≤ −4ε and h is continuous.
fn search_gamma(params: &ModelParams, epsilon: f64) -> f64 {
    let ok = |g: f64| gamma_condition(params, g) < -2.0 * epsilon;
    let mut hi = None;
    for k in (1..=GAMMA_GRID).rev() {
        let g = f64::from(k) / f64::from(GAMMA_GRID);
        if ok(g) {
            let Some(mut bad) = hi else { return g };
            let mut good = g;
            while bad - good > GAMMA_TOL {
                let mid = 0.5 * (good + bad);
                if ok(mid) {
                    good = mid;
                } else {
                    bad = mid;
                }
            }
            return good;
        }
        hi = Some(g);
    }
    let mut g = 1.0 / f64::from(GAMMA_GRID);
    while !ok(g) {
        g /= 2.0;
        assert!(g > 1e-300, "no admissible gamma found");
    }
    g
}

/// Smallest u > s_max² (to relative 1e-9) with f(x) < 0 for all
/// x > u/s_max, then confirmed on a log grid over [u/s_max, 10u].
fn search_u(k: &DriftConstants) -> Result<f64, AnalysisError> {
    let s = k.s_max as f64;
    let bad = |u: f64| f_scaled(k, u / s) >= 0.0;
    let start = s * s + 1.0;
    let u = if !bad(start) {
        start
    } else {
        let mut hi = start;
        while bad(hi) {
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(AnalysisError::NoThreshold);
            }
        }
        let mut lo = (hi / 2.0).max(start);
        while (hi - lo) > U_TOL * hi {
            let mid = 0.5 * (lo + hi);
            if bad(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };
    let (a, b) = ((u / s).ln(), (10.0 * u).ln());
    for i in 0..=U_CONFIRM_POINTS {
        let x = (a + (b - a) * i as f64 / U_CONFIRM_POINTS as f64).exp();
        if x > u / s && f_poly(k, x) >= 0.0 {
            return Err(AnalysisError::NoThreshold);
        }
    }
    Ok(u)
}

impl DriftConstants {
    /// ⌈𝒞⌉ as an integer, if it fits with room for states a few hundred
    /// times larger.
    pub fn threshold(&self) -> Option<u64> {
        let c = self.c_set.ceil();
        let limit = (u64::MAX / 1024 / self.n.max(1) as u64) as f64;
        (c.is_finite() && c <= limit).then_some(c as u64)
    }

    /// Σ q > 𝒞.
    pub fn outside_finite_set(&self, q: &[u64]) -> bool {
        q.iter().map(|&x| x as f64).sum::<f64>() > self.c_set
    }

    /// Checks every defining property again from scratch and lists the
    /// ones that fail.
    pub fn audit(&self, params: &ModelParams) -> Vec<String> {
        let mut out = Vec::new();
        let total: f64 = params.mu.iter().sum();
        let eps = (total - params.lambda).min(params.mu_min()) / 4.0;
        if (eps - self.epsilon).abs() > 1e-12 * eps.max(1.0) || self.epsilon <= 0.0 {
            out.push(format!("epsilon {} != {}", self.epsilon, eps));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            out.push(format!("gamma {} outside (0, 1]", self.gamma));
        }
        let h = gamma_condition(params, self.gamma);
        if h >= -2.0 * self.epsilon {
            out.push(format!("h(gamma) = {h} is not below -2 epsilon"));
        }
        let s = self.s_max as f64;
        if self.u <= s * s {
            out.push(format!("u = {} not above s_max^2", self.u));
        }
        let (a, b) = ((self.u / s).ln(), (100.0 * self.u).ln());
        for i in 1..=U_CONFIRM_POINTS {
            let x = (a + (b - a) * i as f64 / U_CONFIRM_POINTS as f64).exp();
            if f_poly(self, x) >= 0.0 {
                out.push(format!("f({x}) >= 0 beyond u/s_max"));
                break;
            }
        }
        if self.c_set <= c_set_bound(self) {
            out.push("threshold does not exceed its bound".into());
        }
        out
    }
}

/// Σ q_i^{1+γ}.
pub fn lyapunov(q: &[u64], gamma: f64) -> f64 {
    q.iter().map(|&x| (x as f64).powf(1.0 + gamma)).sum()
}

/// to^p − from^p without the cancellation of subtracting two huge powers.
pub fn pow_diff(from: u64, to: u64, p: f64) -> f64 {
    if from == to {
        return 0.0;
    }
    if from == 0 {
        return (to as f64).powf(p);
    }
    if to == 0 {
        return -(from as f64).powf(p);
    }
    let step = (i128::from(to) - i128::from(from)) as f64 / from as f64;
    (from as f64).powf(p) * (p * step.ln_1p()).exp_m1()
}

/// L(after) − L(before), server by server.
pub fn lyapunov_delta(before: &[u64], after: &[u64], gamma: f64) -> f64 {
    before
        .iter()
        .zip(after)
        .map(|(&b, &a)| pow_diff(b, a, 1.0 + gamma))
        .sum()
}
