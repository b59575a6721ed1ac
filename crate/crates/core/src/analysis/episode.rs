//! One interval between consecutive sampling events of PI, started from a
//! boundary state.
//!
//! During such an interval every arrival goes to the LI server l and no
//! other server receives work, so the other queues only drain and the LI
//! queue is a reflected random walk started at zero. [`EpisodeSampler`]
//! uses this to jump over long stretches: the drain moves in blocks that
//! cannot empty any queue, the walk moves in blocks that cannot hit zero,
//! and a walk sitting at zero skips straight to the slot it leaves zero.
//! Every jump is an exact draw from the slot-by-slot law.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use super::{AnalysisError, DriftConstants};
use crate::engine::Simulation;
use crate::model::{ModelParams, SystemState};
use crate::policy::{Family, Policy, PolicySpec};
use crate::rng::{substream, uniform_index, Substream};

/// A state with an empty queue other than LI, outside the finite set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryState {
    pub q: Vec<u64>,
    pub li: usize,
}

impl BoundaryState {
    pub fn new(q: Vec<u64>, li: usize, k: &DriftConstants) -> Result<Self, AnalysisError> {
        let s = BoundaryState { q, li };
        s.check(k)?;
        Ok(s)
    }

    pub fn check(&self, k: &DriftConstants) -> Result<(), AnalysisError> {
        if self.q.len() != k.n || self.li >= k.n {
            return Err(AnalysisError::WrongSize);
        }
        if !self.q.iter().enumerate().any(|(i, &x)| x == 0 && i != self.li) {
            return Err(AnalysisError::NotBoundary);
        }
        if !k.outside_finite_set(&self.q) {
            return Err(AnalysisError::InsideFiniteSet {
                total: self.q.iter().sum(),
                threshold: k.c_set,
            });
        }
        Ok(())
    }

    /// Servers other than LI with an empty queue.
    pub fn idle_non_li(&self) -> usize {
        self.q
            .iter()
            .enumerate()
            .filter(|&(i, &x)| x == 0 && i != self.li)
            .count()
    }

    pub fn system_state(&self) -> SystemState {
        SystemState::with_queues(self.q.clone(), self.li)
    }
}

/// One sampled interval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    /// LI during the interval.
    pub l: usize,
    /// Slots until the next sampling event.
    pub delta: u64,
    /// Smallest starting queue among servers other than `l`.
    pub q_min: u64,
    /// Queues at the next sampling event.
    pub end: Vec<u64>,
}

impl Episode {
    /// (Q_min/s_max) ∨ 1 <= Δ <= Q_min ∨ 1.
    pub fn within_interval_bounds(&self, s_max: u64) -> bool {
        self.delta >= 1
            && u128::from(self.delta) * u128::from(s_max) >= u128::from(self.q_min)
            && self.delta <= self.q_min.max(1)
    }
}

#[derive(Debug, Clone)]
struct LeaveZero {
    /// P(a > s_l) for one slot.
    p_up: f64,
    /// (s, P(s_l = s) P(a > s)) over the capacity support.
    weights: Vec<(u64, f64)>,
}

/// Exact fast sampler of PI intervals for one model.
#[derive(Debug, Clone)]
pub struct EpisodeSampler {
    params: ModelParams,
    leave: Vec<LeaveZero>,
    cap_hi: Vec<u64>,
}

impl EpisodeSampler {
    pub fn new(params: &ModelParams) -> Self {
        let cap_hi: Vec<u64> = params
            .capacities
            .iter()
            .map(|c| c.support().1.expect("bounded capacity"))
            .collect();
        let leave = params
            .capacities
            .iter()
            .zip(&cap_hi)
            .map(|(cap, &hi)| {
                let weights: Vec<(u64, f64)> = (cap.support().0..=hi)
                    .map(|s| (s, cap.pmf(s) * params.arrival.sf(s)))
                    .filter(|&(_, w)| w > 0.0)
                    .collect();
                LeaveZero {
                    p_up: weights.iter().map(|&(_, w)| w).sum::<f64>().min(1.0),
                    weights,
                }
            })
            .collect();
        EpisodeSampler {
            params: params.clone(),
            leave,
            cap_hi,
        }
    }

    /// Samples episode `replica` of `seed` from `state`. The state need not
    /// be outside the finite set, but it must have an empty queue other
    /// than LI.
    pub fn sample(&self, state: &BoundaryState, seed: u64, replica: u32) -> Episode {
        let n = self.params.n;
        assert_eq!(state.q.len(), n, "state and model disagree on n");
        let idle: Vec<usize> = (0..n).filter(|&i| state.q[i] == 0).collect();
        assert!(
            idle.iter().any(|&i| i != state.li),
            "episode must start at a sampling state"
        );
        let mut tie = substream(seed, replica, Substream::TieBreak);
        let l = idle[uniform_index(idle.len(), &mut tie).0];
        let q_min = (0..n)
            .filter(|&i| i != l)
            .map(|i| state.q[i])
            .min()
            .expect("needs two servers");

        let mut end = state.q.clone();
        let delta = self.drain(&mut end, l, seed, replica);
        end[l] = self.walk(l, delta, seed, replica);

        let ep = Episode {
            l,
            delta,
            q_min,
            end,
        };
        assert!(
            ep.within_interval_bounds(self.params.s_max),
            "interval bound violated: delta={} q_min={} s_max={}",
            ep.delta,
            ep.q_min,
            self.params.s_max
        );
        ep
    }

    /// Serves every queue but `l` until one of them is empty and returns
    /// the number of slots taken.
    fn drain(&self, q: &mut [u64], l: usize, seed: u64, replica: u32) -> u64 {
        let others: Vec<usize> = (0..q.len()).filter(|&i| i != l).collect();
        let mut rngs: Vec<ChaCha8Rng> = others
            .iter()
            .map(|&i| substream(seed, replica, Substream::Capacity(i)))
            .collect();
        let fast = others
            .iter()
            .all(|&i| self.params.capacities[i].has_fast_sum());
        let mut slots = 0u64;
        loop {
            let m = others
                .iter()
                .map(|&i| q[i].saturating_sub(1) / self.cap_hi[i])
                .min()
                .unwrap();
            if fast && m >= 2 {
                // No queue can reach zero within m slots.
                for (k, &i) in others.iter().enumerate() {
                    q[i] -= self.params.capacities[i].sample_sum(m, &mut rngs[k]);
                }
                slots += m;
                continue;
            }
            for (k, &i) in others.iter().enumerate() {
                let s = self.params.capacities[i].sample(&mut rngs[k]);
                q[i] = q[i].saturating_sub(s);
            }
            slots += 1;
            if others.iter().any(|&i| q[i] == 0) {
                return slots;
            }
        }
    }

    /// Queue of `l` after `slots` slots of the reflected walk from zero.
    fn walk(&self, l: usize, slots: u64, seed: u64, replica: u32) -> u64 {
        let arrival = &self.params.arrival;
        let cap = &self.params.capacities[l];
        let leave = &self.leave[l];
        let mut a_rng = substream(seed, replica, Substream::Arrival);
        let mut s_rng = substream(seed, replica, Substream::Capacity(l));
        let mut p_rng = substream(seed, replica, Substream::PolicyChoice);
        let fast = arrival.has_fast_sum() && cap.has_fast_sum();
        let geometric = (leave.p_up > 0.0).then(|| Geometric::new(leave.p_up).expect("p in (0, 1]"));
        let mut w = 0u64;
        let mut left = slots;
        while left > 0 {
            if w == 0 {
                let Some(geo) = &geometric else { return 0 };
                // Slots spent at zero before the one that leaves it.
                let stay = geo.sample(&mut p_rng);
                if stay >= left {
                    return 0;
                }
                left -= stay + 1;
                w = self.leave_zero(l, &mut p_rng);
                continue;
            }
            let m = (w / self.cap_hi[l]).min(left);
            if fast && m >= 2 {
                let a = arrival.sample_sum(m, &mut a_rng);
                let s = cap.sample_sum(m, &mut s_rng);
                w = w.checked_add(a).expect("queue overflow") - s;
                left -= m;
            } else {
                let a = arrival.sample(&mut a_rng);
                let s = cap.sample(&mut s_rng);
                w = w.checked_add(a).expect("queue overflow").saturating_sub(s);
                left -= 1;
            }
        }
        w
    }

    /// a − s for one slot conditioned on a > s.
    fn leave_zero(&self, l: usize, rng: &mut ChaCha8Rng) -> u64 {
        let leave = &self.leave[l];
        let mut target = rng.random::<f64>() * leave.p_up;
        let mut s = leave.weights.last().unwrap().0;
        for &(v, w) in &leave.weights {
            if target < w {
                s = v;
                break;
            }
            target -= w;
        }
        let arrival = &self.params.arrival;
        let tail = arrival.sf(s);
        let mut target = rng.random::<f64>() * tail;
        let (_, hi) = arrival.support();
        let mut a = s + 1;
        loop {
            let p = arrival.pmf(a);
            if target < p || hi == Some(a) {
                return a - s;
            }
            target -= p;
            // Rounding can leave a sliver of target past the last
            // representable term.
            if p == 0.0 && a as f64 > arrival.moments().mean {
                return a - s;
            }
            a += 1;
        }
    }
}

/// The same interval run slot by slot through the simulator. Used as an
/// oracle for [`EpisodeSampler`].
pub fn engine_episode(
    params: &ModelParams,
    state: &BoundaryState,
    seed: u64,
    replica: u32,
) -> Episode {
    let policy = Policy::new(PolicySpec::new(Family::Pi, false));
    let mut sim =
        Simulation::from_state_replica(params.clone(), policy, seed, replica, state.system_state());
    let first = sim.step();
    let l = first.li;
    let mut delta = 1;
    let mut sampled = first.is_sampling_event;
    while !sampled {
        sampled = sim.step().is_sampling_event;
        delta += 1;
    }
    let q_min = (0..params.n)
        .filter(|&i| i != l)
        .map(|i| state.q[i])
        .min()
        .expect("needs two servers");
    Episode {
        l,
        delta,
        q_min,
        end: sim.state().q.clone(),
    }
}
