//! Steady-state averages, completion-time distributions and message
//! counts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Trace;
use crate::model::{SlotEvents, SystemState};
use crate::policy::{Family, PolicySpec};

/// Per-run results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub policy: String,
    /// Time average of Σ Q_i(t) over post-warmup slots.
    pub avg_total_queue: f64,
    pub messages_per_slot: f64,
    /// Empirical CDF of completion times of jobs that arrived after warmup.
    pub jct_cdf: Vec<(u64, f64)>,
    pub jct_mean: f64,
    /// Jobs completed during the run (all of them, warmup included).
    pub completed_count: u64,
    /// Jobs that entered the system, initial contents included.
    pub arrived_count: u64,
    pub warmup_slots: u64,
    pub first_half_avg: f64,
    pub second_half_avg: f64,
    pub final_total_queue: u64,
    pub unstable: bool,
}

/// Accumulates [`SummaryStats`] one slot at a time.
#[derive(Debug, Clone)]
pub struct MetricsRecorder {
    policy: PolicySpec,
    horizon: u64,
    warmup: u64,
    last_slot: Option<u64>,
    sum_q: [u128; 2],
    slots: [u64; 2],
    messages: u64,
    jct: BTreeMap<u64, u64>,
    arrived: u64,
    completed: u64,
    final_total: u64,
}

impl MetricsRecorder {
    pub fn new(policy: PolicySpec, horizon: u64, warmup: u64) -> Self {
        assert!(warmup < horizon, "warmup must be shorter than the horizon");
        MetricsRecorder {
            policy,
            horizon,
            warmup,
            last_slot: None,
            sum_q: [0; 2],
            slots: [0; 2],
            messages: 0,
            jct: BTreeMap::new(),
            arrived: 0,
            completed: 0,
            final_total: 0,
        }
    }

    /// Seeds the counters with the jobs present at time 0.
    pub fn with_initial(mut self, initial: &SystemState) -> Self {
        self.arrived = initial.total();
        self
    }

    fn mid(&self) -> u64 {
        self.warmup + (self.horizon - self.warmup) / 2
    }

    /// Feeds one slot. Slots must come in order.
    pub fn record(&mut self, ev: &SlotEvents, state: &SystemState) {
        let expected = self.last_slot.map_or(ev.slot, |s| s + 1);
        assert_eq!(ev.slot, expected, "metrics fed out of order");
        self.last_slot = Some(ev.slot);
        self.arrived += ev.batch_size;
        self.completed += ev.completed_count();
        self.final_total = state.total();
        if ev.slot > self.warmup {
            let half = usize::from(ev.slot > self.mid());
            self.sum_q[half] += u128::from(state.total());
            self.slots[half] += 1;
            self.messages += ev.messages;
            for run in &ev.completed {
                if run.arrival_slot > self.warmup {
                    *self.jct.entry(ev.slot - run.arrival_slot + 1).or_default() += run.count;
                }
            }
        }
    }

    pub fn finish(&self) -> SummaryStats {
        let slots = self.slots[0] + self.slots[1];
        let avg = |s: u128, k: u64| if k == 0 { 0.0 } else { s as f64 / k as f64 };
        let avg_total_queue = avg(self.sum_q[0] + self.sum_q[1], slots);
        let first_half_avg = avg(self.sum_q[0], self.slots[0]);
        let second_half_avg = avg(self.sum_q[1], self.slots[1]);
        let jobs: u64 = self.jct.values().sum();
        let jct_mean = if jobs == 0 {
            0.0
        } else {
            self.jct.iter().map(|(&v, &c)| v as f64 * c as f64).sum::<f64>() / jobs as f64
        };
        SummaryStats {
            policy: self.policy.to_string(),
            avg_total_queue,
            messages_per_slot: if slots == 0 {
                0.0
            } else {
                self.messages as f64 / slots as f64
            },
            jct_cdf: cdf_from_histogram(&self.jct),
            jct_mean,
            completed_count: self.completed,
            arrived_count: self.arrived,
            warmup_slots: self.warmup,
            first_half_avg,
            second_half_avg,
            final_total_queue: self.final_total,
            unstable: looks_unstable(first_half_avg, second_half_avg),
        }
    }
}

/// Flags a run whose queue keeps growing: the second half of the
/// post-warmup window averages more than twice the first half, by at least
/// one job. The absolute floor keeps near-empty systems from tripping the
/// ratio on noise.
pub fn looks_unstable(first_half_avg: f64, second_half_avg: f64) -> bool {
    second_half_avg > 2.0 * first_half_avg && second_half_avg - first_half_avg >= 1.0
}

/// Empirical CDF at each distinct value.
pub fn jct_cdf(values: &[u64]) -> Vec<(u64, f64)> {
    let mut hist = BTreeMap::new();
    for &v in values {
        assert!(v >= 1, "completion times start at 1");
        *hist.entry(v).or_insert(0u64) += 1;
    }
    cdf_from_histogram(&hist)
}

pub fn cdf_from_histogram(hist: &BTreeMap<u64, u64>) -> Vec<(u64, f64)> {
    let total: u64 = hist.values().sum();
    let mut acc = 0;
    hist.iter()
        .map(|(&v, &c)| {
            acc += c;
            (v, if acc == total { 1.0 } else { acc as f64 / total as f64 })
        })
        .collect()
}

/// First slot at which tokens outran the work that could have produced
/// them.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("slot {slot}: {tokens} tokens against an allowance of {allowance}")]
pub struct AuditViolation {
    pub slot: u64,
    pub tokens: u64,
    pub allowance: u64,
}

/// Checks that cumulative tokens never exceed cumulative batches (PI) or
/// nonempty sub-batches (PI-Split), plus one for each server that was busy
/// at time 0 and so owes a token without having received a batch.
pub fn message_audit(trace: &Trace) -> Result<(), AuditViolation> {
    assert_eq!(trace.policy.family, Family::Pi, "message audit is defined for PI");
    let events = trace.events.as_ref().expect("message audit needs events");
    let mut allowance = trace.initial.q.iter().filter(|&&x| x > 0).count() as u64;
    let mut tokens = 0;
    for ev in events {
        allowance += if trace.policy.splittable {
            ev.allocation.sub_batches()
        } else {
            u64::from(ev.batch_size > 0)
        };
        tokens += ev.tokens_sent;
        if tokens > allowance {
            return Err(AuditViolation {
                slot: ev.slot,
                tokens,
                allowance,
            });
        }
    }
    Ok(())
}
