//! The slot-by-slot transition.
//!
//! Each slot runs in four steps: a batch arrives, the dispatcher routes it,
//! every server serves up to its realized capacity (jobs that just arrived
//! included), and servers that emptied send their token back.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::DistSpec;
use crate::jobs::JobLedger;
use crate::metrics::{MetricsRecorder, SummaryStats};
use crate::model::{ModelParams, SlotEvents, SystemState};
use crate::policy::{Policy, PolicySpec};
use crate::rng::{uniform_index, RngStreams};

/// A running simulation.
#[derive(Debug, Clone)]
pub struct Simulation {
    params: ModelParams,
    policy: Policy,
    streams: RngStreams,
    state: SystemState,
    ledger: JobLedger,
    arrived: u64,
    completed: u64,
}

impl Simulation {
    /// Empty system with LI drawn uniformly from all servers.
    pub fn new(params: ModelParams, policy: Policy, seed: u64) -> Self {
        let mut streams = RngStreams::new(seed, params.n);
        let li = uniform_index(params.n, &mut streams.tie_break).0;
        let state = SystemState::empty(params.n, li);
        Self::assemble(params, policy, streams, state)
    }

    /// Starts from `state` as given, LI included.
    pub fn from_state(params: ModelParams, policy: Policy, seed: u64, state: SystemState) -> Self {
        Self::from_state_replica(params, policy, seed, 0, state)
    }

    /// As [`Simulation::from_state`] on replica `replica` of the seed's
    /// streams.
    pub fn from_state_replica(
        params: ModelParams,
        policy: Policy,
        seed: u64,
        replica: u32,
        state: SystemState,
    ) -> Self {
        assert_eq!(state.n(), params.n, "state and model disagree on n");
        assert_eq!(
            state.dispatcher_tokens,
            state.q.iter().map(|&x| x == 0).collect::<Vec<_>>(),
            "initial tokens must match the idle set"
        );
        let streams = RngStreams::for_replica(seed, replica, params.n);
        Self::assemble(params, policy, streams, state)
    }

    /// Starts from queues `q` with LI drawn uniformly from the idle servers,
    /// or from all servers if none is idle.
    pub fn from_queues(params: ModelParams, policy: Policy, seed: u64, q: Vec<u64>) -> Self {
        let mut streams = RngStreams::new(seed, params.n);
        let idle: Vec<usize> = (0..q.len()).filter(|&i| q[i] == 0).collect();
        let li = if idle.is_empty() {
            uniform_index(q.len(), &mut streams.tie_break).0
        } else {
            idle[uniform_index(idle.len(), &mut streams.tie_break).0]
        };
        let state = SystemState::with_queues(q, li);
        Self::assemble(params, policy, streams, state)
    }

    fn assemble(
        params: ModelParams,
        mut policy: Policy,
        mut streams: RngStreams,
        state: SystemState,
    ) -> Self {
        policy.bind(params.n, &mut streams);
        let ledger = JobLedger::with_initial(&state.q);
        let arrived = state.total();
        Simulation {
            params,
            policy,
            streams,
            state,
            ledger,
            arrived,
            completed: 0,
        }
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn ledger(&self) -> &JobLedger {
        &self.ledger
    }

    /// Runs one slot.
    pub fn step(&mut self) -> SlotEvents {
        let n = self.params.n;
        let t = self.state.slot + 1;
        let batch = self.params.arrival.sample(&mut self.streams.arrival);
        let capacities: Vec<u64> = self
            .params
            .capacities
            .iter()
            .zip(self.streams.capacity.iter_mut())
            .map(|(c, rng)| c.sample(rng))
            .collect();
        let decision = self.policy.route(&self.state, batch, &mut self.streams);
        let alloc = decision.allocation;
        assert_eq!(alloc.total(), batch, "slot {t}: allocation does not sum to the batch");

        let q = &mut self.state.q;
        let tokens = &mut self.state.dispatcher_tokens;
        let mut departures = vec![0; n];
        let mut tokens_sent = 0;
        for i in 0..n {
            let load = q[i]
                .checked_add(alloc.counts[i])
                .expect("queue length overflow");
            let d = capacities[i].min(load);
            departures[i] = d;
            q[i] = load - d;
            if alloc.counts[i] > 0 {
                // Sending work returns the token to the server.
                tokens[i] = false;
            }
            if load > 0 && q[i] == 0 {
                assert!(!tokens[i], "slot {t}: server {} holds two tokens", i + 1);
                tokens[i] = true;
                tokens_sent += 1;
            }
        }
        for i in 0..n {
            assert_eq!(
                tokens[i],
                q[i] == 0,
                "slot {t}: token of server {} out of sync with its queue",
                i + 1
            );
        }
        self.state.li = decision.new_li;
        self.state.slot = t;

        self.ledger.admit(t, &alloc);
        let completed = self.ledger.complete(&departures);
        self.arrived += batch;
        self.completed += departures.iter().sum::<u64>();
        assert_eq!(
            self.arrived,
            self.completed + self.state.total(),
            "slot {t}: jobs not conserved"
        );

        let messages = if self.policy.spec.family.is_token_based() {
            tokens_sent
        } else {
            decision.probes
        };
        SlotEvents {
            slot: t,
            batch_size: batch,
            allocation: alloc,
            capacities,
            departures,
            completed,
            tokens_sent,
            messages,
            li: self.state.li,
            is_sampling_event: self.state.is_sampling_state(),
        }
    }

    /// Runs `horizon` slots, calling `observe` after each one.
    pub fn run_with<F>(&mut self, horizon: u64, keep_events: bool, mut observe: F) -> Trace
    where
        F: FnMut(&SlotEvents, &SystemState),
    {
        let mut trace = Trace::start(self.policy.spec, self.state.clone(), keep_events, horizon);
        for _ in 0..horizon {
            let ev = self.step();
            observe(&ev, &self.state);
            trace.push(ev, &self.state);
        }
        trace.final_state = self.state.clone();
        trace
    }
}

/// Options for [`run`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Start here instead of the empty system.
    pub initial: Option<SystemState>,
    /// Keep every [`SlotEvents`] in the trace.
    pub keep_events: bool,
    /// Slots excluded from steady-state averages. `None` means 10% of the
    /// horizon.
    pub warmup: Option<u64>,
}

/// A trace and its summary statistics.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    pub summary: SummaryStats,
}

/// Runs `policy` for `horizon` slots.
pub fn run(
    params: &ModelParams,
    policy: Policy,
    horizon: u64,
    seed: u64,
    options: RunOptions,
) -> RunOutput {
    assert!(horizon >= 1, "horizon must be at least 1");
    let warmup = options.warmup.unwrap_or(horizon / 10);
    let spec = policy.spec;
    let mut sim = match options.initial {
        Some(s) => Simulation::from_state(params.clone(), policy, seed, s),
        None => Simulation::new(params.clone(), policy, seed),
    };
    let mut rec = MetricsRecorder::new(spec, horizon, warmup).with_initial(sim.state());
    let trace = sim.run_with(horizon, options.keep_events, |ev, st| rec.record(ev, st));
    RunOutput {
        trace,
        summary: rec.finish(),
    }
}

/// What a run leaves behind. Per-slot totals are always kept; full events
/// only on request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trace {
    pub policy: PolicySpec,
    pub initial: SystemState,
    pub events: Option<Vec<SlotEvents>>,
    pub final_state: SystemState,
    /// Σ Q_i(t) for t = 1..=horizon.
    pub total_queue: Vec<u64>,
    pub batches: Vec<u64>,
    pub messages: Vec<u64>,
    pub sampling: Vec<bool>,
    pub tokens_total: u64,
    pub nonempty_batches: u64,
    pub nonempty_sub_batches: u64,
    pub arrivals_total: u64,
}

impl Trace {
    fn start(policy: PolicySpec, initial: SystemState, keep_events: bool, horizon: u64) -> Self {
        let cap = usize::try_from(horizon).unwrap_or(0).min(1 << 24);
        Trace {
            policy,
            final_state: initial.clone(),
            initial,
            events: keep_events.then(|| Vec::with_capacity(cap)),
            total_queue: Vec::with_capacity(cap),
            batches: Vec::with_capacity(cap),
            messages: Vec::with_capacity(cap),
            sampling: Vec::with_capacity(cap),
            tokens_total: 0,
            nonempty_batches: 0,
            nonempty_sub_batches: 0,
            arrivals_total: 0,
        }
    }

    fn push(&mut self, ev: SlotEvents, state: &SystemState) {
        self.total_queue.push(state.total());
        self.batches.push(ev.batch_size);
        self.messages.push(ev.messages);
        self.sampling.push(ev.is_sampling_event);
        self.tokens_total += ev.tokens_sent;
        self.nonempty_batches += u64::from(ev.batch_size > 0);
        self.nonempty_sub_batches += ev.allocation.sub_batches();
        self.arrivals_total += ev.batch_size;
        if let Some(events) = &mut self.events {
            events.push(ev);
        }
    }

    pub fn horizon(&self) -> u64 {
        self.total_queue.len() as u64
    }

    pub fn messages_total(&self) -> u64 {
        self.messages.iter().sum()
    }

    /// Rebuilds the final state from the initial one and the events.
    pub fn replay(&self) -> Result<SystemState, ReplayError> {
        let events = self.events.as_ref().ok_or(ReplayError::NoEvents)?;
        let mut s = self.initial.clone();
        for ev in events {
            s = apply_events(&s, ev)?;
        }
        Ok(s)
    }

    /// The state after every slot, starting with the initial one.
    pub fn states(&self) -> Result<Vec<SystemState>, ReplayError> {
        let events = self.events.as_ref().ok_or(ReplayError::NoEvents)?;
        let mut out = Vec::with_capacity(events.len() + 1);
        out.push(self.initial.clone());
        for ev in events {
            let next = apply_events(out.last().expect("nonempty"), ev)?;
            out.push(next);
        }
        Ok(out)
    }

    /// Row-per-slot CSV: slot, batch, q_1..q_n (when `with_queues` and
    /// events were kept), total_q, messages, is_sampling_event.
    pub fn write_csv<W: Write>(&self, out: W, with_queues: bool) -> Result<(), ReplayError> {
        let mut w = csv::Writer::from_writer(out);
        let states = if with_queues { Some(self.states()?) } else { None };
        let mut header = vec!["slot".to_string(), "batch".to_string()];
        if states.is_some() {
            header.extend((1..=self.initial.n()).map(|i| format!("q_{i}")));
        }
        header.extend(["total_q", "messages", "is_sampling_event"].map(String::from));
        w.write_record(&header)?;
        for t in 0..self.total_queue.len() {
            let mut row = vec![(t + 1).to_string(), self.batches[t].to_string()];
            if let Some(states) = &states {
                row.extend(states[t + 1].q.iter().map(u64::to_string));
            }
            row.push(self.total_queue[t].to_string());
            row.push(self.messages[t].to_string());
            row.push(u8::from(self.sampling[t]).to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("trace was recorded without events")]
    NoEvents,
    #[error("slot {slot}: {what}")]
    Inconsistent { slot: u64, what: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Applies one slot's events to `state`, checking them against the
/// queue recursion as it goes.
pub fn apply_events(state: &SystemState, ev: &SlotEvents) -> Result<SystemState, ReplayError> {
    let bad = |what: String| ReplayError::Inconsistent {
        slot: ev.slot,
        what,
    };
    if ev.slot != state.slot + 1 {
        return Err(bad(format!("expected slot {}", state.slot + 1)));
    }
    if ev.allocation.total() != ev.batch_size {
        return Err(bad("allocation does not sum to the batch".into()));
    }
    let mut next = state.clone();
    for i in 0..state.n() {
        let load = state.q[i] + ev.allocation.counts[i];
        let d = ev.capacities[i].min(load);
        if d != ev.departures[i] {
            return Err(bad(format!("server {} departures disagree", i + 1)));
        }
        next.q[i] = load - d;
        next.dispatcher_tokens[i] = next.q[i] == 0;
    }
    next.li = ev.li;
    next.slot = ev.slot;
    Ok(next)
}

/// Slots at which some server other than LI is idle.
pub fn sampling_times(trace: &Trace) -> Vec<u64> {
    trace
        .sampling
        .iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(t, _)| t as u64 + 1)
        .collect()
}

/// A sampling interval outside its bracket.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("interval from slot {tau} has length {delta}, Q_min={q_min}, s_max={s_max}")]
pub struct IntervalViolation {
    pub tau: u64,
    pub delta: u64,
    pub q_min: u64,
    pub s_max: u64,
}

/// Checks (Q_min/s_max) ∨ 1 <= Δ_k <= Q_min ∨ 1 for every pair of
/// consecutive sampling slots of a PI trace. Q_min is taken over the
/// servers other than the next LI at τ_k. Returns the number of intervals
/// checked.
pub fn check_interval_bounds(trace: &Trace, s_max: u64) -> Result<usize, IntervalViolation> {
    let states = trace.states().expect("interval check needs events");
    let times = sampling_times(trace);
    let mut checked = 0;
    for w in times.windows(2) {
        let (tau, next) = (w[0], w[1]);
        let at = &states[tau as usize];
        // LI during (tau, next] is the LI chosen at slot tau + 1.
        let l = states[tau as usize + 1].li;
        let q_min = (0..at.n())
            .filter(|&i| i != l)
            .map(|i| at.q[i])
            .min()
            .expect("needs two servers");
        let delta = next - tau;
        let ok = delta >= 1 && delta * s_max >= q_min && delta <= q_min.max(1);
        if !ok {
            return Err(IntervalViolation {
                tau,
                delta,
                q_min,
                s_max,
            });
        }
        checked += 1;
    }
    Ok(checked)
}

/// Simulates until the first sampling event (at most `limit` slots) and
/// returns τ_0, or `None` if none occurred.
pub fn first_sampling_time(sim: &mut Simulation, limit: u64) -> Option<u64> {
    (0..limit).find_map(|_| sim.step().is_sampling_event.then(|| sim.state().slot))
}

/// Convenience for building a model with `n` identical servers.
pub fn homogeneous(arrival: DistSpec, capacity: DistSpec, n: usize) -> ModelParams {
    ModelParams::new(arrival, vec![capacity; n]).expect("valid homogeneous model")
}
