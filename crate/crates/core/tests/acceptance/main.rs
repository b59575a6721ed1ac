//! Acceptance suite. Prints one line per criterion and exits non-zero if a
//! criterion fails that is not listed in `KNOWN_RED`.

use std::process::ExitCode;
use std::time::Instant;

use persistent_idle::analysis::{desk_scenarios, run_drift_lab, DriftLabReport, Verdict};
use persistent_idle::dist::DistSpec;
use persistent_idle::engine::{check_interval_bounds, first_sampling_time, run, RunOptions, Simulation};
use persistent_idle::experiment::{build_scenario, ExperimentConfig, Scenario};
use persistent_idle::metrics::message_audit;
use persistent_idle::model::ModelParams;
use persistent_idle::policy::{water_fill, Family, Policy, PolicySpec, SplitRule};
use persistent_idle::rng::{substream, Substream};
use rand::Rng;

/// Criteria expected to fail, with the reason. Each is analysed in the
/// decisions ledger.
const KNOWN_RED: &[(u32, &str)] = &[
    (4, "n=5 at load 0.9 has no representable state outside the finite set"),
    (5, "n=5 at load 0.9 has no representable state outside the finite set"),
    (6, "n=5 at load 0.9 has no representable state outside the finite set"),
];

const DRIFT_REPS: usize = 10_000;
const DRIFT_SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn all_specs() -> Vec<PolicySpec> {
    Family::ALL
        .iter()
        .flat_map(|&f| [false, true].map(|s| PolicySpec::new(f, s)))
        .collect()
}

fn desk_config(n: usize, scenario: Scenario) -> ExperimentConfig {
    ExperimentConfig {
        n,
        scenario,
        ..ExperimentConfig::default()
    }
}

fn events() -> RunOptions {
    RunOptions {
        keep_events: true,
        ..RunOptions::default()
    }
}

fn c1_token_protocol() -> Outcome {
    let mut runs = 0;
    let mut slots = 0u64;
    for scenario in [Scenario::Ratio10_90, Scenario::Ratio50_50, Scenario::Ratio90_10] {
        let params = build_scenario(&desk_config(10, scenario), 0.9).unwrap();
        for spec in all_specs() {
            let out = run(&params, Policy::new(spec), 100_000, 77, events());
            let t = &out.trace;
            for st in t.states().unwrap() {
                if st.tokens() != st.idle_set() {
                    return outcome(false, format!("{spec} {scenario}: tokens != idle at slot {}", st.slot));
                }
            }
            if spec.family == Family::Pi {
                if let Err(v) = message_audit(t) {
                    return outcome(false, format!("{spec} {scenario}: {v}"));
                }
                let allowance = if spec.splittable { t.nonempty_sub_batches } else { t.nonempty_batches };
                if t.messages_total() > allowance {
                    return outcome(false, format!("{spec} {scenario}: {} messages > {allowance}", t.messages_total()));
                }
            }
            runs += 1;
            slots += t.horizon();
        }
    }
    outcome(true, format!("{runs} runs, {slots} slots, n=10, 0 violations"))
}

fn random_model(rng: &mut impl Rng, n: usize) -> ModelParams {
    let arrival = match rng.random_range(0..3) {
        0 => DistSpec::poisson(rng.random_range(0.2..0.9) * n as f64).unwrap(),
        1 => DistSpec::bernoulli(rng.random_range(0.1..0.9), rng.random_range(1..4)).unwrap(),
        _ => DistSpec::truncated_poisson(rng.random_range(0.2..2.0) * n as f64, 20).unwrap(),
    };
    let caps = (0..n)
        .map(|_| {
            if rng.random_bool(0.5) {
                DistSpec::deterministic(rng.random_range(1..3))
            } else {
                let lo = rng.random_range(1..3);
                DistSpec::uniform_int(lo, lo + rng.random_range(0..4)).unwrap()
            }
        })
        .collect();
    ModelParams::new(arrival, caps).unwrap()
}

fn c2_replay() -> Outcome {
    let mut rng = substream(2, 0, Substream::PolicyChoice);
    let specs = all_specs();
    for seed in 0..100u64 {
        let n = [1, 2, 5][seed as usize % 3];
        let params = random_model(&mut rng, n);
        let spec = specs[rng.random_range(0..specs.len())];
        let out = run(&params, Policy::new(spec), 2_000, seed, events());
        let t = &out.trace;
        match t.replay() {
            Ok(s) if s == t.final_state => {}
            _ => return outcome(false, format!("seed {seed}: replay differs")),
        }
        let states = t.states().unwrap();
        let evs = t.events.as_ref().unwrap();
        for (k, ev) in evs.iter().enumerate() {
            let before = states[k].total();
            let after = states[k + 1].total();
            let out: u64 = ev.departures.iter().sum();
            if before + ev.batch_size != after + out || ev.completed_count() != out {
                return outcome(false, format!("seed {seed}: conservation fails at slot {}", ev.slot));
            }
        }
    }
    outcome(true, "100 seeds, n in {1,2,5}, replays bit-exact, conservation at every slot")
}

fn c3_interval_bounds() -> Outcome {
    let params = ModelParams::new(
        DistSpec::poisson(4.0).unwrap(),
        vec![
            DistSpec::deterministic(1),
            DistSpec::uniform_int(1, 2).unwrap(),
            DistSpec::uniform_int(1, 3).unwrap(),
            DistSpec::uniform_int(1, 4).unwrap(),
            DistSpec::deterministic(2),
        ],
    )
    .unwrap();
    let mut intervals = 0;
    for seed in 0..50 {
        let out = run(&params, Policy::new(PolicySpec::new(Family::Pi, false)), 100_000, seed, events());
        match check_interval_bounds(&out.trace, params.s_max) {
            Ok(k) => intervals += k,
            Err(v) => return outcome(false, format!("seed {seed}: {v}")),
        }
    }
    let mut rng = substream(3, 0, Substream::PolicyChoice);
    for seed in 0..20 {
        let q: Vec<u64> = (0..5).map(|_| rng.random_range(0..2_000)).collect();
        let bound = q.iter().copied().max().unwrap().max(1);
        let mut sim = Simulation::from_queues(
            params.clone(),
            Policy::new(PolicySpec::new(Family::Pi, false)),
            seed,
            q.clone(),
        );
        match first_sampling_time(&mut sim, bound + 1) {
            Some(t) if t <= bound => {}
            t => return outcome(false, format!("q(0)={q:?}: first sample {t:?} > {bound}")),
        }
    }
    outcome(true, format!("{intervals} intervals over 50 runs, 20 initial states, 0 violations"))
}

fn lab_summary<F>(lab: &DriftLabReport, per_cell: F) -> (bool, String)
where
    F: Fn(&persistent_idle::analysis::CellReport) -> (usize, usize),
{
    let mut ok = true;
    let mut parts = Vec::new();
    let (mut passed, mut total) = (0, 0);
    for cell in &lab.cells {
        if let Some(why) = &cell.blocked {
            ok = false;
            parts.push(format!("{} blocked ({why})", cell.scenario));
            continue;
        }
        let (p, t) = per_cell(cell);
        passed += p;
        total += t;
        if p != t {
            ok = false;
            parts.push(format!("{}: {p}/{t}", cell.scenario));
        }
    }
    let mut detail = format!("{passed}/{total} runnable states pass");
    if !parts.is_empty() {
        detail.push_str("; ");
        detail.push_str(&parts.join("; "));
    }
    (ok, detail)
}

fn c4_drift(lab: &DriftLabReport) -> Outcome {
    let (mut ok, detail) = lab_summary(lab, |c| {
        let p = c.drift.iter().filter(|r| r.verdict == Verdict::Pass).count();
        (p, c.drift.len())
    });
    for c in lab.cells.iter().filter(|c| c.blocked.is_none()) {
        if c.drift.len() < 6 {
            ok = false;
        }
    }
    outcome(ok, detail)
}

fn c5_rrw(lab: &DriftLabReport) -> Outcome {
    let (ok, detail) = lab_summary(lab, |c| {
        let p = c.rrw.iter().filter(|r| r.verdict == Verdict::Pass).count();
        (p, c.rrw.len())
    });
    outcome(ok, detail)
}

fn c6_split(lab: &DriftLabReport) -> Outcome {
    let (mut ok, mut detail) = lab_summary(lab, |c| {
        let p = c.split.iter().filter(|r| r.verdict == Verdict::Pass).count();
        (p, c.split.len())
    });
    let two_server: Vec<&str> = lab
        .cells
        .iter()
        .filter(|c| c.n < 3)
        .map(|c| c.scenario.as_str())
        .collect();
    for c in lab.cells.iter().filter(|c| c.n >= 3 && c.blocked.is_none()) {
        if c.split.len() < 4 {
            ok = false;
        }
    }
    if !two_server.is_empty() {
        detail.push_str(&format!(
            "; no such states exist with two servers ({})",
            two_server.join(", ")
        ));
    }
    outcome(ok, detail)
}

fn brute_minimax(q: &[u64], batch: u64) -> u64 {
    fn go(q: &[u64], i: usize, left: u64, cur: u64, best: &mut u64) {
        if cur >= *best {
            return;
        }
        if i + 1 == q.len() {
            *best = (*best).min(cur.max(q[i] + left));
            return;
        }
        for a in 0..=left {
            go(q, i + 1, left - a, cur.max(q[i] + a), best);
        }
    }
    let mut best = u64::MAX;
    go(q, 0, batch, 0, &mut best);
    best
}

fn c7_water_fill() -> Outcome {
    let mut rng = substream(7, 0, Substream::PolicyChoice);
    let mut checked = 0u64;
    for n in 1..=5usize {
        let all: Vec<usize> = (0..n).collect();
        for code in 0..7usize.pow(n as u32) {
            let q: Vec<u64> = (0..n).map(|i| ((code / 7usize.pow(i as u32)) % 7) as u64).collect();
            for batch in 0..=8 {
                let a = water_fill(&q, &all, batch, &mut rng);
                let got = q.iter().zip(&a.counts).map(|(x, y)| x + y).max().unwrap();
                let want = brute_minimax(&q, batch);
                if got != want || a.total() != batch {
                    return outcome(false, format!("q={q:?} batch={batch}: {got} vs {want}"));
                }
                checked += 1;
            }
        }
    }
    outcome(true, format!("{checked} instances, all at the minimax optimum"))
}

fn c8_stability() -> Outcome {
    let params = build_scenario(&desk_config(10, Scenario::Ratio50_50), 0.9).unwrap();
    let mut parts = Vec::new();
    let mut ok = true;
    for split in [false, true] {
        let spec = PolicySpec::new(Family::Pi, split);
        let out = run(
            &params,
            Policy::new(spec),
            100_000,
            8,
            RunOptions {
                warmup: Some(10_000),
                ..RunOptions::default()
            },
        );
        let s = &out.summary;
        let rel = (s.second_half_avg - s.first_half_avg).abs() / s.first_half_avg;
        ok &= rel <= 0.25;
        parts.push(format!(
            "{spec}: halves {:.2} / {:.2} ({:+.1}%)",
            s.first_half_avg,
            s.second_half_avg,
            100.0 * (s.second_half_avg - s.first_half_avg) / s.first_half_avg
        ));
    }
    outcome(ok, parts.join("; "))
}

fn c9_ordering() -> Outcome {
    let params = build_scenario(&desk_config(10, Scenario::Ratio50_50), 0.95).unwrap();
    let mut good = 0;
    let mut notes = Vec::new();
    for seed in 1..=5u64 {
        let avg = |f: Family| {
            run(&params, Policy::new(PolicySpec::new(f, false)), 100_000, seed, RunOptions::default())
                .summary
                .avg_total_queue
        };
        let pi = avg(Family::Pi);
        let jsq = avg(Family::Jsq);
        let jsq2 = avg(Family::Jsq2);
        let jsq11 = avg(Family::Jsq11);
        let jiq = avg(Family::Jiq);
        let holds = pi < jsq2 && pi < jsq11 && jsq < pi && jsq < jsq2 && jsq < jsq11 && jsq < jiq;
        good += usize::from(holds);
        notes.push(format!(
            "s{seed}{} JSQ {jsq:.0} PI {pi:.0} JSQ(1,1) {jsq11:.0} JIQ {jiq:.0} JSQ(2) {jsq2:.0}",
            if holds { "" } else { "*" }
        ));
    }
    outcome(good >= 4, format!("{good}/5 seeds ordered; {}", notes.join(" | ")))
}

fn c10_pi_equals_split() -> Outcome {
    let params = ModelParams::new(
        DistSpec::poisson(3.5).unwrap(),
        vec![
            DistSpec::deterministic(1),
            DistSpec::uniform_int(1, 2).unwrap(),
            DistSpec::uniform_int(1, 4).unwrap(),
            DistSpec::deterministic(1),
            DistSpec::uniform_int(1, 3).unwrap(),
        ],
    )
    .unwrap();
    for seed in 0..20 {
        let a = run(&params, Policy::new(PolicySpec::new(Family::Pi, false)), 10_000, seed, events());
        let b = run(
            &params,
            Policy::new(PolicySpec::new(Family::Pi, true)).with_split_rule(SplitRule::WholeToOneIdle),
            10_000,
            seed,
            events(),
        );
        if a.trace.events != b.trace.events || a.trace.final_state != b.trace.final_state {
            return outcome(false, format!("seed {seed}: traces differ"));
        }
    }
    outcome(true, "20 seeds, n=5, 10^4 slots, traces identical")
}

fn main() -> ExitCode {
    let mut unexpected = 0;
    let mut report = |id: u32, name: &str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let known = KNOWN_RED.iter().find(|(k, _)| *k == id);
        let status = match (o.pass, known) {
            (true, _) => "PASS",
            (false, Some(_)) => "FAIL (known)",
            (false, None) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!(
            "criterion {id:>2} {name:<28} {status:<12} {:>6.1}s  {}",
            t.elapsed().as_secs_f64(),
            o.detail
        );
        if let (false, Some((_, why))) = (o.pass, known) {
            println!("              known cause: {why}");
        }
    };
    report(1, "token protocol", &c1_token_protocol);
    report(2, "recursion replay", &c2_replay);
    report(3, "interval bounds", &c3_interval_bounds);
    let t = Instant::now();
    let lab = run_drift_lab(&desk_scenarios(), DRIFT_REPS, DRIFT_SEED);
    println!("drift lab: {} scenarios, {DRIFT_REPS} reps per state, {:.1}s", lab.cells.len(), t.elapsed().as_secs_f64());
    report(4, "drift inequality", &|| c4_drift(&lab));
    report(5, "reflected-walk bound", &|| c5_rrw(&lab));
    report(6, "PI-Split one-step drift", &|| c6_split(&lab));
    report(7, "water-filling oracle", &c7_water_fill);
    report(8, "desk-scale stability", &c8_stability);
    report(9, "qualitative ordering", &c9_ordering);
    report(10, "PI equals PI-Split oracle", &c10_pi_equals_split);
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{unexpected} unexpected failure(s)");
        ExitCode::FAILURE
    }
}
