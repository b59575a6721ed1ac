//! Batch-size and service-capacity distributions.
//!
//! Every kind has closed-form (or finite-sum) moments, an exact pmf and cdf,
//! and an exact sampler for the sum of `m` independent draws. The last one is
//! what lets the drift lab skip over long stretches of a trajectory without
//! approximating it.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest Poisson mean the sampler accepts in one draw.
const POISSON_MAX_MEAN: f64 = 1.0e17;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("uniform-int requires lo <= hi (got lo={lo}, hi={hi})")]
    EmptyRange { lo: u64, hi: u64 },
    #[error("rate must be finite and nonnegative (got {0})")]
    BadRate(f64),
    #[error("probability must lie in [0, 1] (got {0})")]
    BadProbability(f64),
}

/// A distribution over the nonnegative integers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistSpec {
    Deterministic { value: u64 },
    UniformInt { lo: u64, hi: u64 },
    Poisson { rate: f64 },
    /// `value` with probability `p`, otherwise 0.
    Bernoulli { p: f64, value: u64 },
    /// Poisson with all mass above `cap` moved onto `cap`.
    TruncatedPoisson { rate: f64, cap: u64 },
}

/// Mean and variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

impl Moments {
    pub fn std_dev(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

fn check_rate(rate: f64) -> Result<(), DistError> {
    if rate.is_finite() && rate >= 0.0 {
        Ok(())
    } else {
        Err(DistError::BadRate(rate))
    }
}

impl DistSpec {
    pub fn deterministic(value: u64) -> Self {
        DistSpec::Deterministic { value }
    }

    pub fn uniform_int(lo: u64, hi: u64) -> Result<Self, DistError> {
        if lo > hi {
            return Err(DistError::EmptyRange { lo, hi });
        }
        Ok(DistSpec::UniformInt { lo, hi })
    }

    pub fn poisson(rate: f64) -> Result<Self, DistError> {
        check_rate(rate)?;
        Ok(DistSpec::Poisson { rate })
    }

    pub fn bernoulli(p: f64, value: u64) -> Result<Self, DistError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(DistError::BadProbability(p));
        }
        Ok(DistSpec::Bernoulli { p, value })
    }

    pub fn truncated_poisson(rate: f64, cap: u64) -> Result<Self, DistError> {
        check_rate(rate)?;
        Ok(DistSpec::TruncatedPoisson { rate, cap })
    }

    /// Checks parameters of a value built without the constructors
    /// (for instance one read from a config file).
    pub fn check(&self) -> Result<(), DistError> {
        match *self {
            DistSpec::Deterministic { .. } => Ok(()),
            DistSpec::UniformInt { lo, hi } => Self::uniform_int(lo, hi).map(|_| ()),
            DistSpec::Poisson { rate } | DistSpec::TruncatedPoisson { rate, .. } => {
                check_rate(rate)
            }
            DistSpec::Bernoulli { p, value } => Self::bernoulli(p, value).map(|_| ()),
        }
    }

    /// Smallest and largest value with positive probability. `None` means
    /// unbounded.
    pub fn support(&self) -> (u64, Option<u64>) {
        match *self {
            DistSpec::Deterministic { value } => (value, Some(value)),
            DistSpec::UniformInt { lo, hi } => (lo, Some(hi)),
            DistSpec::Poisson { rate } => (0, if rate == 0.0 { Some(0) } else { None }),
            DistSpec::Bernoulli { p, value } => {
                if p == 0.0 {
                    (0, Some(0))
                } else if p == 1.0 {
                    (value, Some(value))
                } else {
                    (0, Some(value))
                }
            }
            DistSpec::TruncatedPoisson { rate, cap } => {
                if rate == 0.0 || cap == 0 {
                    (0, Some(0))
                } else {
                    (0, Some(cap))
                }
            }
        }
    }

    /// P(X = k).
    pub fn pmf(&self, k: u64) -> f64 {
        match *self {
            DistSpec::Deterministic { value } => f64::from(u8::from(k == value)),
            DistSpec::UniformInt { lo, hi } => {
                if (lo..=hi).contains(&k) {
                    1.0 / (hi - lo + 1) as f64
                } else {
                    0.0
                }
            }
            DistSpec::Poisson { rate } => poisson_pmf(rate, k),
            DistSpec::Bernoulli { p, value } => {
                let mut mass = 0.0;
                if k == value {
                    mass += p;
                }
                if k == 0 {
                    mass += 1.0 - p;
                }
                mass
            }
            DistSpec::TruncatedPoisson { rate, cap } => {
                if k < cap {
                    poisson_pmf(rate, k)
                } else if k == cap {
                    poisson_upper_tail(rate, cap)
                } else {
                    0.0
                }
            }
        }
    }

    /// P(X <= k).
    pub fn cdf(&self, k: u64) -> f64 {
        match *self {
            DistSpec::Deterministic { value } => f64::from(u8::from(k >= value)),
            DistSpec::UniformInt { lo, hi } => {
                if k < lo {
                    0.0
                } else if k >= hi {
                    1.0
                } else {
                    (k - lo + 1) as f64 / (hi - lo + 1) as f64
                }
            }
            DistSpec::Poisson { rate } => poisson_cdf(rate, k),
            DistSpec::Bernoulli { p, value } => {
                if k >= value {
                    1.0
                } else {
                    1.0 - p
                }
            }
            DistSpec::TruncatedPoisson { rate, cap } => {
                if k >= cap {
                    1.0
                } else {
                    poisson_cdf(rate, k)
                }
            }
        }
    }

    /// P(X > k), summed from the tail where that is more accurate.
    pub fn sf(&self, k: u64) -> f64 {
        match *self {
            DistSpec::Poisson { rate } => {
                if rate == 0.0 {
                    0.0
                } else {
                    poisson_upper_tail(rate, k + 1)
                }
            }
            DistSpec::TruncatedPoisson { rate, cap } => {
                if k >= cap || rate == 0.0 {
                    0.0
                } else {
                    poisson_upper_tail(rate, k + 1)
                }
            }
            _ => (1.0 - self.cdf(k)).max(0.0),
        }
    }

    /// Exact mean and variance. Truncated Poisson is summed term by term up
    /// to the cap.
    pub fn moments(&self) -> Moments {
        match *self {
            DistSpec::Deterministic { value } => Moments {
                mean: value as f64,
                variance: 0.0,
            },
            DistSpec::UniformInt { lo, hi } => {
                let width = (hi - lo + 1) as f64;
                Moments {
                    mean: (lo as f64 + hi as f64) / 2.0,
                    variance: (width * width - 1.0) / 12.0,
                }
            }
            DistSpec::Poisson { rate } => Moments {
                mean: rate,
                variance: rate,
            },
            DistSpec::Bernoulli { p, value } => {
                let v = value as f64;
                Moments {
                    mean: p * v,
                    variance: p * (1.0 - p) * v * v,
                }
            }
            DistSpec::TruncatedPoisson { rate, cap } => {
                if rate == 0.0 || cap == 0 {
                    return Moments {
                        mean: 0.0,
                        variance: 0.0,
                    };
                }
                let pmfs: Vec<f64> = (0..=cap).map(|k| self.pmf(k)).collect();
                let mean: f64 = pmfs.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
                let variance: f64 = pmfs
                    .iter()
                    .enumerate()
                    .map(|(k, p)| {
                        let d = k as f64 - mean;
                        d * d * p
                    })
                    .sum();
                Moments { mean, variance }
            }
        }
    }

    /// True when [`DistSpec::sample_sum`] runs in time independent of `m`.
    pub fn has_fast_sum(&self) -> bool {
        match *self {
            DistSpec::Deterministic { .. } | DistSpec::Poisson { .. } => true,
            DistSpec::Bernoulli { .. } => true,
            DistSpec::UniformInt { lo, hi } => (hi - lo + 1).is_power_of_two(),
            DistSpec::TruncatedPoisson { .. } => false,
        }
    }

    /// One draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match *self {
            DistSpec::Deterministic { value } => value,
            DistSpec::UniformInt { lo, hi } => rng.random_range(lo..=hi),
            DistSpec::Poisson { rate } => poisson_draw(rate, rng),
            DistSpec::Bernoulli { p, value } => {
                if rng.random_bool(p) {
                    value
                } else {
                    0
                }
            }
            DistSpec::TruncatedPoisson { rate, cap } => poisson_draw(rate, rng).min(cap),
        }
    }

    /// The sum of `m` independent draws, sampled exactly.
    ///
    /// Uniform-int on a power-of-two width is a sum of independent fair
    /// bits, so each bit plane is one binomial draw. Other widths and the
    /// truncated Poisson fall back to `m` single draws.
    pub fn sample_sum<R: Rng + ?Sized>(&self, m: u64, rng: &mut R) -> u64 {
        if m == 0 {
            return 0;
        }
        match *self {
            DistSpec::Deterministic { value } => value.checked_mul(m).expect("sum overflow"),
            DistSpec::Poisson { rate } => {
                let mean = rate * m as f64;
                if mean <= POISSON_MAX_MEAN {
                    poisson_draw(mean, rng)
                } else {
                    let half = m / 2;
                    self.sample_sum(half, rng) + self.sample_sum(m - half, rng)
                }
            }
            DistSpec::Bernoulli { p, value } => {
                let hits = binomial_draw(m, p, rng);
                value.checked_mul(hits).expect("sum overflow")
            }
            DistSpec::UniformInt { lo, hi } if (hi - lo + 1).is_power_of_two() => {
                let bits = (hi - lo + 1).trailing_zeros();
                let mut total = lo.checked_mul(m).expect("sum overflow");
                for b in 0..bits {
                    total += binomial_draw(m, 0.5, rng) << b;
                }
                total
            }
            _ => (0..m).map(|_| self.sample(rng)).sum(),
        }
    }
}

fn ln_poisson_pmf(rate: f64, k: u64) -> f64 {
    let k = k as f64;
    k * rate.ln() - rate - statrs::function::gamma::ln_gamma(k + 1.0)
}

fn poisson_pmf(rate: f64, k: u64) -> f64 {
    if rate == 0.0 {
        return f64::from(u8::from(k == 0));
    }
    ln_poisson_pmf(rate, k).exp()
}

fn poisson_cdf(rate: f64, k: u64) -> f64 {
    if rate == 0.0 {
        return 1.0;
    }
    let below: f64 = (0..=k).map(|j| poisson_pmf(rate, j)).sum();
    below.min(1.0)
}

/// P(X >= cap) for X ~ Poisson(rate).
fn poisson_upper_tail(rate: f64, cap: u64) -> f64 {
    if cap == 0 {
        return 1.0;
    }
    if (cap as f64) > rate {
        // Sum the tail directly; it is tiny and summing it avoids 1 - (1 - tiny).
        let mut total = 0.0;
        let mut k = cap;
        loop {
            let term = poisson_pmf(rate, k);
            total += term;
            if term < total * 1e-18 || term == 0.0 {
                break;
            }
            k += 1;
        }
        total
    } else {
        (1.0 - poisson_cdf(rate, cap - 1)).max(0.0)
    }
}

fn poisson_draw<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if rate == 0.0 {
        return 0;
    }
    let d = Poisson::new(rate).expect("valid Poisson rate");
    let x: f64 = d.sample(rng);
    x as u64
}

fn binomial_draw<R: Rng + ?Sized>(m: u64, p: f64, rng: &mut R) -> u64 {
    Binomial::new(m, p).expect("valid binomial").sample(rng)
}
