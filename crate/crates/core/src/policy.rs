//! Routing decisions.
//!
//! A policy sees the end-of-previous-slot state and the size of the new
//! batch and returns an [`Allocation`] plus the new Last-Idle server. PI and
//! JIQ look only at the tokens held by the dispatcher; the JSQ family probes
//! queue lengths.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Allocation, SystemState};
use crate::rng::{reduce, tie_break_uniform, uniform_index, RngStreams};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("split rule gives {got} jobs for a batch of {batch} at q={q:?}")]
    SplitNotConserving { q: Vec<u64>, batch: u64, got: u64 },
    #[error("split rule sends jobs to busy server {server} at q={q:?}")]
    SplitToBusyServer { q: Vec<u64>, server: usize },
    #[error("split rule returned {got} counts for {n} servers")]
    SplitWrongLength { n: usize, got: usize },
    #[error("unknown policy family {0:?}")]
    UnknownFamily(String),
    #[error("memory is only meaningful for JSQ(1,1)")]
    MemoryOnNonJsq11,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Pi,
    Jiq,
    Jsq,
    Jsq2,
    Jsq11,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Pi,
        Family::Jiq,
        Family::Jsq,
        Family::Jsq2,
        Family::Jsq11,
    ];

    /// Families whose message cost is the token traffic.
    pub fn is_token_based(self) -> bool {
        matches!(self, Family::Pi | Family::Jiq)
    }

    pub fn slug(self) -> &'static str {
        match self {
            Family::Pi => "pi",
            Family::Jiq => "jiq",
            Family::Jsq => "jsq",
            Family::Jsq2 => "jsq2",
            Family::Jsq11 => "jsq11",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Pi => "PI",
            Family::Jiq => "JIQ",
            Family::Jsq => "JSQ",
            Family::Jsq2 => "JSQ(2)",
            Family::Jsq11 => "JSQ(1,1)",
        })
    }
}

impl FromStr for Family {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let k: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match k.as_str() {
            "pi" => Ok(Family::Pi),
            "jiq" => Ok(Family::Jiq),
            "jsq" => Ok(Family::Jsq),
            "jsq2" => Ok(Family::Jsq2),
            "jsq11" => Ok(Family::Jsq11),
            _ => Err(PolicyError::UnknownFamily(s.to_string())),
        }
    }
}

/// Family, split mode, and the JSQ(1,1) memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PolicySpec {
    pub family: Family,
    pub splittable: bool,
    /// Remembered server for JSQ(1,1). `None` until the policy is bound to
    /// a system, at which point it is drawn uniformly.
    pub memory: Option<usize>,
}

impl PolicySpec {
    pub fn new(family: Family, splittable: bool) -> Self {
        PolicySpec {
            family,
            splittable,
            memory: None,
        }
    }

    pub fn with_memory(self, memory: usize) -> Result<Self, PolicyError> {
        if self.family != Family::Jsq11 {
            return Err(PolicyError::MemoryOnNonJsq11);
        }
        Ok(PolicySpec {
            memory: Some(memory),
            ..self
        })
    }

    /// Short name used in file names, e.g. `pi-split` or `jsq2`.
    pub fn slug(&self) -> String {
        if self.splittable {
            format!("{}-split", self.family.slug())
        } else {
            self.family.slug().to_string()
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.family, self.splittable) {
            (Family::Pi, true) => f.write_str("PI-Split"),
            (fam, true) => write!(f, "{fam}-split"),
            (fam, false) => write!(f, "{fam}"),
        }
    }
}

/// A deterministic split function f(q, a, B) for PI-Split.
pub trait SplitFunction: Send + Sync + fmt::Debug {
    fn split(&self, q: &[u64], batch: u64, b: u64) -> Vec<u64>;
}

/// How PI-Split divides a batch among idle servers.
#[derive(Debug, Clone)]
#[derive(Default)]
pub enum SplitRule {
    /// As even as possible; `B(t)` sets where the remainder starts.
    #[default]
    EvenSplit,
    /// The whole batch to one idle server picked by `B(t)`. Because `B(t)`
    /// is the same draw that picks the new LI, this makes PI-Split follow PI
    /// exactly.
    WholeToOneIdle,
    Custom(Arc<dyn SplitFunction>),
}

impl PartialEq for SplitRule {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (SplitRule::EvenSplit, SplitRule::EvenSplit) => true,
            (SplitRule::WholeToOneIdle, SplitRule::WholeToOneIdle) => true,
            (SplitRule::Custom(a), SplitRule::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}


const PROBE_B: [u64; 5] = [0, 1, 1 << 62, 1 << 63, u64::MAX];

impl SplitRule {
    /// Wraps a user split function after probing it on every queue vector
    /// in {0,1,2}^n (n <= 4) with an idle server, batches up to 6 and a
    /// spread of `B` values.
    pub fn custom(f: Arc<dyn SplitFunction>) -> Result<Self, PolicyError> {
        for n in 1..=4usize {
            for code in 0..3usize.pow(n as u32) {
                let q: Vec<u64> = (0..n)
                    .map(|i| ((code / 3usize.pow(i as u32)) % 3) as u64)
                    .collect();
                if !q.contains(&0) {
                    continue;
                }
                for batch in 0..=6 {
                    for b in PROBE_B {
                        check_split(&q, batch, &f.split(&q, batch, b))?;
                    }
                }
            }
        }
        Ok(SplitRule::Custom(f))
    }

    /// Evaluates f(q, batch, b). `q` must contain a zero.
    pub fn apply(&self, q: &[u64], batch: u64, b: u64) -> Allocation {
        let idle: Vec<usize> = (0..q.len()).filter(|&i| q[i] == 0).collect();
        assert!(!idle.is_empty(), "split rule called with no idle server");
        let k = idle.len();
        let counts = match self {
            SplitRule::EvenSplit => {
                let mut counts = vec![0; q.len()];
                let base = batch / k as u64;
                let extra = (batch % k as u64) as usize;
                let start = reduce(b, k);
                for (j, &i) in idle.iter().enumerate() {
                    counts[i] = base;
                    if (j + k - start) % k < extra {
                        counts[i] += 1;
                    }
                }
                counts
            }
            SplitRule::WholeToOneIdle => {
                let mut counts = vec![0; q.len()];
                counts[idle[reduce(b, k)]] = batch;
                counts
            }
            SplitRule::Custom(f) => f.split(q, batch, b),
        };
        Allocation { counts }
    }
}

fn check_split(q: &[u64], batch: u64, counts: &[u64]) -> Result<(), PolicyError> {
    if counts.len() != q.len() {
        return Err(PolicyError::SplitWrongLength {
            n: q.len(),
            got: counts.len(),
        });
    }
    let got: u64 = counts.iter().sum();
    if got != batch {
        return Err(PolicyError::SplitNotConserving {
            q: q.to_vec(),
            batch,
            got,
        });
    }
    if let Some(server) = (0..q.len()).find(|&i| q[i] > 0 && counts[i] > 0) {
        return Err(PolicyError::SplitToBusyServer {
            q: q.to_vec(),
            server: server + 1,
        });
    }
    Ok(())
}

/// A routing decision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub allocation: Allocation,
    pub new_li: usize,
    /// Queue-length probes spent (JSQ family only).
    pub probes: u64,
}

/// PI: a new LI drawn from the token holders if there are any, and the
/// whole batch to LI.
pub fn route_pi<R: RngCore + ?Sized>(
    state: &SystemState,
    batch: u64,
    tie: &mut R,
) -> (Allocation, usize) {
    let tokens = state.tokens();
    let li = if tokens.is_empty() {
        state.li
    } else {
        tokens[uniform_index(tokens.len(), tie).0]
    };
    (Allocation::single(state.n(), li, batch), li)
}

/// PI-Split: as PI when no server is idle, otherwise `rule` spreads the
/// batch over the idle servers. `B(t)` is the raw draw behind the new LI.
pub fn route_pi_split<R: RngCore + ?Sized>(
    state: &SystemState,
    batch: u64,
    tie: &mut R,
    rule: &SplitRule,
) -> (Allocation, usize) {
    let tokens = state.tokens();
    if tokens.is_empty() {
        return (Allocation::single(state.n(), state.li, batch), state.li);
    }
    let (i, b) = uniform_index(tokens.len(), tie);
    let alloc = rule.apply(&state.q, batch, b);
    (alloc, tokens[i])
}

/// Water-filling: the allocation of `batch` jobs over `candidates` that
/// greedy one-at-a-time assignment to the currently shortest candidate
/// produces, with ties broken uniformly.
///
/// Computed in one pass: find the level L that the batch fills the lowest
/// candidates up to, then hand the leftover r jobs to a uniformly random
/// r-subset of the candidates sitting at L. That subset is exactly what
/// the greedy tie-breaks would pick.
pub fn water_fill<R: Rng + ?Sized>(
    q: &[u64],
    candidates: &[usize],
    batch: u64,
    rng: &mut R,
) -> Allocation {
    assert!(!candidates.is_empty(), "water_fill needs a candidate");
    let mut counts = vec![0; q.len()];
    if batch == 0 {
        return Allocation { counts };
    }
    let mut order: Vec<usize> = candidates.to_vec();
    order.sort_by_key(|&i| (q[i], i));
    debug_assert!(order.windows(2).all(|w| w[0] != w[1]), "duplicate candidates");
    // Largest prefix j whose members can all be raised to q[order[j-1]].
    let mut j = 1;
    let mut cost: u64 = 0;
    while j < order.len() {
        let next = q[order[j]];
        let step = (next - q[order[j - 1]]) * j as u64;
        if cost + step > batch {
            break;
        }
        cost += step;
        j += 1;
    }
    let base = q[order[j - 1]];
    let rest = batch - cost;
    let level = base + rest / j as u64;
    let extra = (rest % j as u64) as usize;
    for &i in &order[..j] {
        counts[i] = level - q[i];
    }
    for pick in index::sample(rng, j, extra) {
        counts[order[pick]] += 1;
    }
    Allocation { counts }
}

/// Candidates with the smallest queue, then a uniform pick among them.
fn argmin_uniform<R: RngCore + ?Sized>(values: &[u64], among: &[usize], rng: &mut R) -> usize {
    let best = among.iter().map(|&i| values[i]).min().expect("nonempty");
    let ties: Vec<usize> = among
        .iter()
        .copied()
        .filter(|&i| values[i] == best)
        .collect();
    tie_break_uniform(&ties, rng)
}

fn to_candidates(state: &SystemState, batch: u64, among: &[usize], split: bool, rng: &mut (impl Rng + ?Sized)) -> Allocation {
    if split {
        water_fill(&state.q, among, batch, rng)
    } else {
        Allocation::single(state.n(), argmin_uniform(&state.q, among, rng), batch)
    }
}

pub fn route_jsq<R: Rng + ?Sized>(
    state: &SystemState,
    batch: u64,
    splittable: bool,
    rng: &mut R,
) -> Allocation {
    let all: Vec<usize> = (0..state.n()).collect();
    to_candidates(state, batch, &all, splittable, rng)
}

fn sample_two<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    if n == 1 {
        vec![0]
    } else {
        index::sample(rng, n, 2).into_vec()
    }
}

pub fn route_jsq2<R: Rng + ?Sized>(
    state: &SystemState,
    batch: u64,
    splittable: bool,
    rng: &mut R,
) -> Allocation {
    let pair = sample_two(state.n(), rng);
    to_candidates(state, batch, &pair, splittable, rng)
}

/// JSQ(1,1): compare the remembered server with one uniform sample, route,
/// then remember whichever of the two is shorter after the assignment.
pub fn route_jsq11<R: Rng + ?Sized>(
    state: &SystemState,
    batch: u64,
    splittable: bool,
    memory: &mut usize,
    rng: &mut R,
) -> Allocation {
    let sample = rng.random_range(0..state.n());
    let mut among = vec![*memory];
    if sample != *memory {
        among.push(sample);
    }
    let alloc = to_candidates(state, batch, &among, splittable, rng);
    let post: Vec<u64> = state
        .q
        .iter()
        .zip(&alloc.counts)
        .map(|(q, a)| q + a)
        .collect();
    *memory = argmin_uniform(&post, &among, rng);
    alloc
}

/// JIQ: idle servers first. Without one, the unsplit variant picks a
/// uniform server and the split variant sends every job to its own
/// uniform server.
pub fn route_jiq<R: Rng + ?Sized>(
    state: &SystemState,
    batch: u64,
    splittable: bool,
    rng: &mut R,
) -> Allocation {
    let n = state.n();
    let tokens = state.tokens();
    match (tokens.is_empty(), splittable) {
        (false, true) => water_fill(&state.q, &tokens, batch, rng),
        (false, false) => Allocation::single(n, tie_break_uniform(&tokens, rng), batch),
        (true, false) => Allocation::single(n, rng.random_range(0..n), batch),
        (true, true) => {
            let mut counts = vec![0; n];
            for _ in 0..batch {
                counts[rng.random_range(0..n)] += 1;
            }
            Allocation { counts }
        }
    }
}

/// A policy bound to a system: the spec (with live JSQ(1,1) memory) and
/// the PI-Split rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub spec: PolicySpec,
    pub split_rule: SplitRule,
}

impl Policy {
    pub fn new(spec: PolicySpec) -> Self {
        Policy {
            spec,
            split_rule: SplitRule::default(),
        }
    }

    pub fn with_split_rule(mut self, rule: SplitRule) -> Self {
        self.split_rule = rule;
        self
    }

    /// Draws the initial JSQ(1,1) memory if it is not set.
    pub fn bind(&mut self, n: usize, streams: &mut RngStreams) {
        if self.spec.family == Family::Jsq11 && self.spec.memory.is_none() {
            self.spec.memory = Some(streams.policy.random_range(0..n));
        }
    }

    pub fn route(
        &mut self,
        state: &SystemState,
        batch: u64,
        streams: &mut RngStreams,
    ) -> Decision {
        let n = state.n();
        let split = self.spec.splittable;
        let probes = |k: u64| if batch > 0 { k } else { 0 };
        match self.spec.family {
            Family::Pi => {
                let (allocation, new_li) = if split {
                    route_pi_split(state, batch, &mut streams.tie_break, &self.split_rule)
                } else {
                    route_pi(state, batch, &mut streams.tie_break)
                };
                Decision {
                    allocation,
                    new_li,
                    probes: 0,
                }
            }
            _ if batch == 0 => Decision {
                allocation: Allocation::zeros(n),
                new_li: state.li,
                probes: 0,
            },
            Family::Jiq => Decision {
                allocation: route_jiq(state, batch, split, &mut streams.policy),
                new_li: state.li,
                probes: 0,
            },
            Family::Jsq => Decision {
                allocation: route_jsq(state, batch, split, &mut streams.policy),
                new_li: state.li,
                probes: probes(n as u64),
            },
            Family::Jsq2 => Decision {
                allocation: route_jsq2(state, batch, split, &mut streams.policy),
                new_li: state.li,
                probes: probes(n.min(2) as u64),
            },
            Family::Jsq11 => {
                let mut memory = self.spec.memory.expect("JSQ(1,1) policy not bound");
                let allocation = route_jsq11(state, batch, split, &mut memory, &mut streams.policy);
                self.spec.memory = Some(memory);
                Decision {
                    allocation,
                    new_li: state.li,
                    probes: probes(n.min(2) as u64),
                }
            }
        }
    }
}
