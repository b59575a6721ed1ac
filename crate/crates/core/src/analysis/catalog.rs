//! Small models and the boundary states the drift checks run on.

use serde::{Deserialize, Serialize};

use super::constants::{compute_constants, DriftConstants};
use super::drift::{
    check_pisplit_onestep, drift_from_episodes, rrw_from_episodes, sample_episodes, DriftReport,
    RrwReport, SplitReport,
};
use super::episode::BoundaryState;
use super::AnalysisError;
use crate::dist::DistSpec;
use crate::model::ModelParams;

#[derive(Debug, Clone)]
pub struct DeskScenario {
    pub name: &'static str,
    pub params: ModelParams,
}

/// Two and five servers at loads 0.5 and 0.9.
pub fn desk_scenarios() -> Vec<DeskScenario> {
    let det1 = DistSpec::deterministic(1);
    let u12 = DistSpec::uniform_int(1, 2).unwrap();
    let poisson = |r| DistSpec::poisson(r).unwrap();
    let mk = |name, arrival, cap: &DistSpec, n| DeskScenario {
        name,
        params: ModelParams::new(arrival, vec![*cap; n]).expect("desk model"),
    };
    vec![
        mk("n2-load0.5", poisson(1.0), &det1, 2),
        mk("n2-load0.9", DistSpec::bernoulli(0.9, 3).unwrap(), &u12, 2),
        mk("n5-load0.5", poisson(3.75), &u12, 5),
        mk("n5-load0.5-det", poisson(2.5), &det1, 5),
        mk("n5-load0.9", poisson(4.5), &det1, 5),
    ]
}

fn sizes(k: &DriftConstants) -> Result<u64, AnalysisError> {
    k.threshold().ok_or(AnalysisError::Unrepresentable(k.c_set))
}

/// Boundary states outside the finite set.
///
/// With two servers the only other queue holds the whole load, so every
/// state has a long interval. With three or more, small non-LI queues
/// (1, u/2, u) give short intervals and a second empty queue gives an
/// interval of one slot.
pub fn boundary_catalog(k: &DriftConstants) -> Result<Vec<BoundaryState>, AnalysisError> {
    let c = sizes(k)?;
    let n = k.n;
    let states = if n == 2 {
        [2, 5, 10]
            .iter()
            .flat_map(|&m| {
                [
                    BoundaryState { q: vec![0, m * c], li: 1 },
                    BoundaryState { q: vec![m * c, 0], li: 0 },
                ]
            })
            .collect()
    } else {
        let (m2, m10) = (2 * c, 10 * c);
        let u = k.u.floor() as u64;
        let fill = |head: &[u64], rest: u64| {
            let mut q = head.to_vec();
            q.resize(n, rest);
            q
        };
        vec![
            BoundaryState { q: fill(&[0], m2), li: 1 },
            BoundaryState { q: fill(&[0], m10), li: 1 },
            BoundaryState {
                q: (0..n).map(|i| if i == 1 { 0 } else { (i as u64 % 3 + 1) * m2 }).collect(),
                li: 2,
            },
            BoundaryState { q: fill(&[0, 1], m2), li: 2 },
            BoundaryState { q: fill(&[0, u / 2], m2), li: n - 1 },
            BoundaryState { q: fill(&[0, u], m10), li: 1 },
            BoundaryState { q: fill(&[0, 0], m2), li: 2 },
        ]
    };
    for s in &states {
        s.check(k)?;
    }
    Ok(states)
}

/// States with at least two empty queues other than LI. Empty for n < 3.
pub fn split_catalog(k: &DriftConstants) -> Result<Vec<BoundaryState>, AnalysisError> {
    let c = sizes(k)?;
    let n = k.n;
    if n < 3 {
        return Ok(Vec::new());
    }
    let mut states: Vec<BoundaryState> = [2, 3, 5, 10]
        .iter()
        .map(|&m| BoundaryState {
            q: (0..n).map(|i| if i < 2 { 0 } else { m * c }).collect(),
            li: n - 1,
        })
        .collect();
    let mut q = vec![0; n];
    q[n - 1] = 2 * c;
    states.push(BoundaryState { q, li: n - 1 });
    if n >= 4 {
        let mut q = vec![0, 0, 1];
        q.resize(n, 2 * c);
        states.push(BoundaryState { q, li: 2 });
    }
    for s in &states {
        s.check(k)?;
    }
    Ok(states)
}

/// Results for one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellReport {
    pub scenario: String,
    pub n: usize,
    pub load: f64,
    pub constants: Option<DriftConstants>,
    /// Why the cell could not be run, if it could not.
    pub blocked: Option<String>,
    pub drift: Vec<DriftReport>,
    pub rrw: Vec<RrwReport>,
    pub split: Vec<SplitReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftLabReport {
    pub reps: usize,
    pub seed: u64,
    pub cells: Vec<CellReport>,
}

fn state_seed(seed: u64, cell: usize, state: usize, kind: u64) -> u64 {
    seed ^ ((cell as u64) << 40 | kind << 32 | state as u64)
}

/// Runs every check on every scenario in `scenarios`.
pub fn run_drift_lab(scenarios: &[DeskScenario], reps: usize, seed: u64) -> DriftLabReport {
    let cells = scenarios
        .iter()
        .enumerate()
        .map(|(ci, sc)| run_cell(ci, sc, reps, seed))
        .collect();
    DriftLabReport { reps, seed, cells }
}

fn run_cell(ci: usize, sc: &DeskScenario, reps: usize, seed: u64) -> CellReport {
    let mut cell = CellReport {
        scenario: sc.name.to_string(),
        n: sc.params.n,
        load: sc.params.load(),
        constants: None,
        blocked: None,
        drift: Vec::new(),
        rrw: Vec::new(),
        split: Vec::new(),
    };
    let k = match compute_constants(&sc.params) {
        Ok(k) => k,
        Err(e) => {
            cell.blocked = Some(e.to_string());
            return cell;
        }
    };
    cell.constants = Some(k.clone());
    let (boundary, split) = match (boundary_catalog(&k), split_catalog(&k)) {
        (Ok(b), Ok(s)) => (b, s),
        (Err(e), _) | (_, Err(e)) => {
            cell.blocked = Some(e.to_string());
            return cell;
        }
    };
    for (si, st) in boundary.iter().enumerate() {
        let eps = sample_episodes(&sc.params, st, reps, state_seed(seed, ci, si, 0));
        cell.drift.push(drift_from_episodes(st, &k, &eps));
        cell.rrw.push(rrw_from_episodes(st, &k, &eps));
    }
    for (si, st) in split.iter().enumerate() {
        let r = check_pisplit_onestep(st, &sc.params, &k, reps, state_seed(seed, ci, si, 1))
            .expect("catalog state meets the preconditions");
        cell.split.push(r);
    }
    cell
}
