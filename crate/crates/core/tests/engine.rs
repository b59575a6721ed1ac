use persistent_idle::dist::DistSpec;
use persistent_idle::engine::{
    check_interval_bounds, first_sampling_time, run, RunOptions, Simulation,
};
use persistent_idle::metrics::message_audit;
use persistent_idle::model::{ModelParams, SystemState};
use persistent_idle::policy::{Family, Policy, PolicySpec};
use proptest::prelude::*;

fn arrival() -> impl Strategy<Value = DistSpec> {
    prop_oneof![
        (0.1f64..4.0).prop_map(|r| DistSpec::poisson(r).unwrap()),
        (0.05f64..0.95, 1u64..6).prop_map(|(p, v)| DistSpec::bernoulli(p, v).unwrap()),
        (0.1f64..4.0, 1u64..12).prop_map(|(r, c)| DistSpec::truncated_poisson(r, c).unwrap()),
    ]
}

fn capacity() -> impl Strategy<Value = DistSpec> {
    prop_oneof![
        (1u64..4).prop_map(DistSpec::deterministic),
        (1u64..3, 0u64..4).prop_map(|(lo, w)| DistSpec::uniform_int(lo, lo + w).unwrap()),
    ]
}

fn model() -> impl Strategy<Value = ModelParams> {
    (arrival(), prop::collection::vec(capacity(), 1..6))
        .prop_map(|(a, c)| ModelParams::new(a, c).unwrap())
}

fn policy() -> impl Strategy<Value = PolicySpec> {
    (prop::sample::select(Family::ALL.to_vec()), any::<bool>())
        .prop_map(|(f, s)| PolicySpec::new(f, s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_slot_is_consistent(params in model(), spec in policy(), seed in any::<u64>()) {
        let mut sim = Simulation::new(params.clone(), Policy::new(spec), seed);
        let mut jobs_in = 0u64;
        let mut jobs_out = 0u64;
        for _ in 0..400 {
            let before = sim.state().clone();
            let ev = sim.step();
            let after = sim.state();
            jobs_in += ev.batch_size;
            jobs_out += ev.completed_count();
            prop_assert_eq!(ev.allocation.total(), ev.batch_size);
            for i in 0..params.n {
                let load = before.q[i] + ev.allocation.counts[i];
                prop_assert_eq!(ev.departures[i], ev.capacities[i].min(load));
                prop_assert_eq!(after.q[i], load - ev.departures[i]);
            }
            prop_assert_eq!(after.tokens(), after.idle_set());
            prop_assert_eq!(ev.is_sampling_event, after.is_sampling_state());
            prop_assert_eq!(after.total() + jobs_out, jobs_in);
            prop_assert_eq!(sim.ledger().issued(), jobs_in);
            for i in 0..params.n {
                prop_assert_eq!(sim.ledger().queue_len(i), after.q[i]);
            }
        }
    }

    #[test]
    fn replay_is_exact(params in model(), spec in policy(), seed in any::<u64>()) {
        let out = run(&params, Policy::new(spec), 300, seed, RunOptions { keep_events: true, ..Default::default() });
        prop_assert_eq!(out.trace.replay().unwrap(), out.trace.final_state.clone());
    }

    #[test]
    fn pi_tokens_within_allowance(params in model(), split in any::<bool>(), seed in any::<u64>()) {
        let spec = PolicySpec::new(Family::Pi, split);
        let out = run(&params, Policy::new(spec), 500, seed, RunOptions { keep_events: true, ..Default::default() });
        prop_assert!(message_audit(&out.trace).is_ok());
    }

    #[test]
    fn pi_intervals_within_bounds(params in model(), seed in any::<u64>()) {
        prop_assume!(params.n >= 2);
        let out = run(&params, Policy::new(PolicySpec::new(Family::Pi, false)), 500, seed,
            RunOptions { keep_events: true, ..Default::default() });
        prop_assert!(check_interval_bounds(&out.trace, params.s_max).is_ok());
    }

    #[test]
    fn first_sample_no_later_than_largest_queue(
        params in model(),
        q in prop::collection::vec(0u64..50, 5),
        seed in any::<u64>(),
    ) {
        prop_assume!(params.n >= 2);
        let q: Vec<u64> = q[..params.n].to_vec();
        let bound = q.iter().copied().max().unwrap().max(1);
        let mut sim = Simulation::from_queues(params, Policy::new(PolicySpec::new(Family::Pi, false)), seed, q);
        let tau0 = first_sampling_time(&mut sim, bound + 1);
        prop_assert!(matches!(tau0, Some(t) if t <= bound));
    }

    #[test]
    fn jct_cdf_is_a_cdf(params in model(), spec in policy(), seed in any::<u64>()) {
        let out = run(&params, Policy::new(spec), 2000, seed, RunOptions::default());
        let cdf = &out.summary.jct_cdf;
        prop_assert!(cdf.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
        if let Some(last) = cdf.last() {
            prop_assert_eq!(last.1, 1.0);
            prop_assert!(cdf[0].0 >= 1);
        }
    }
}

#[test]
fn policies_share_input_streams() {
    let params = ModelParams::new(
        DistSpec::poisson(2.0).unwrap(),
        vec![DistSpec::uniform_int(1, 2).unwrap(); 3],
    )
    .unwrap();
    let totals: Vec<u64> = Family::ALL
        .iter()
        .flat_map(|&f| [false, true].map(|s| PolicySpec::new(f, s)))
        .map(|spec| run(&params, Policy::new(spec), 3000, 8, RunOptions::default()).trace.arrivals_total)
        .collect();
    assert!(totals.windows(2).all(|w| w[0] == w[1]), "{totals:?}");
}

#[test]
fn sampling_state_starts_interval_of_one() {
    let params = ModelParams::new(DistSpec::bernoulli(0.5, 1).unwrap(), vec![DistSpec::deterministic(1); 3]).unwrap();
    let state = SystemState::with_queues(vec![0, 0, 9], 2);
    let mut sim = Simulation::from_state(params, Policy::new(PolicySpec::new(Family::Pi, false)), 3, state);
    assert!(sim.step().is_sampling_event);
}
