use std::sync::Arc;

use persistent_idle::dist::DistSpec;
use persistent_idle::engine::{run, RunOptions};
use persistent_idle::model::{ModelParams, SystemState};
use persistent_idle::policy::{
    route_jiq, route_jsq, route_jsq2, route_pi_split, water_fill, Family, Policy, PolicySpec,
    SplitFunction, SplitRule,
};
use persistent_idle::rng::substream;
use persistent_idle::rng::Substream;
use proptest::prelude::*;

/// Smallest achievable max queue, by enumerating every way to place the
/// batch.
fn brute_minimax(q: &[u64], batch: u64) -> u64 {
    fn go(q: &[u64], i: usize, left: u64, cur_max: u64, best: &mut u64) {
        if cur_max >= *best {
            return;
        }
        if i + 1 == q.len() {
            *best = (*best).min(cur_max.max(q[i] + left));
            return;
        }
        for a in 0..=left {
            go(q, i + 1, left - a, cur_max.max(q[i] + a), best);
        }
    }
    let mut best = u64::MAX;
    go(q, 0, batch, 0, &mut best);
    best
}

/// Sorted post-assignment queues of the one-job-at-a-time greedy rule.
/// Ties do not change this multiset.
fn greedy_profile(q: &[u64], cands: &[usize], batch: u64) -> Vec<u64> {
    let mut post = q.to_vec();
    for _ in 0..batch {
        let i = *cands.iter().min_by_key(|&&i| (post[i], i)).unwrap();
        post[i] += 1;
    }
    let mut v: Vec<u64> = cands.iter().map(|&i| post[i]).collect();
    v.sort_unstable();
    v
}

#[test]
fn water_fill_meets_minimax_on_small_grid() {
    let mut rng = substream(11, 0, Substream::PolicyChoice);
    for n in 1..=4usize {
        let all: Vec<usize> = (0..n).collect();
        for code in 0..7usize.pow(n as u32) {
            let q: Vec<u64> = (0..n).map(|i| ((code / 7usize.pow(i as u32)) % 7) as u64).collect();
            for batch in 0..=8 {
                let a = water_fill(&q, &all, batch, &mut rng);
                let post_max = q.iter().zip(&a.counts).map(|(x, y)| x + y).max().unwrap();
                assert_eq!(post_max, brute_minimax(&q, batch), "q={q:?} batch={batch}");
            }
        }
    }
}

proptest! {
    #[test]
    fn water_fill_matches_greedy(
        q in prop::collection::vec(0u64..20, 1..7),
        mask in any::<u8>(),
        batch in 0u64..60,
        seed in any::<u64>(),
    ) {
        let n = q.len();
        let mut cands: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        if cands.is_empty() {
            cands.push(0);
        }
        let mut rng = substream(seed, 0, Substream::PolicyChoice);
        let a = water_fill(&q, &cands, batch, &mut rng);
        prop_assert_eq!(a.total(), batch);
        for i in 0..n {
            if !cands.contains(&i) {
                prop_assert_eq!(a.counts[i], 0);
            }
        }
        let mut got: Vec<u64> = cands.iter().map(|&i| q[i] + a.counts[i]).collect();
        got.sort_unstable();
        prop_assert_eq!(got, greedy_profile(&q, &cands, batch));
    }

    #[test]
    fn pi_split_conserves_and_spares_busy_servers(
        q in prop::collection::vec(0u64..5, 2..7),
        batch in 0u64..40,
        seed in any::<u64>(),
    ) {
        let state = SystemState::with_queues(q.clone(), 0);
        let mut tie = substream(seed, 0, Substream::TieBreak);
        let (a, li) = route_pi_split(&state, batch, &mut tie, &SplitRule::EvenSplit);
        prop_assert_eq!(a.total(), batch);
        if q.contains(&0) {
            prop_assert_eq!(q[li], 0);
            for (&qi, &ai) in q.iter().zip(&a.counts) {
                if qi > 0 {
                    prop_assert_eq!(ai, 0);
                }
            }
            let idle: Vec<u64> = (0..q.len()).filter(|&i| q[i] == 0).map(|i| a.counts[i]).collect();
            let (lo, hi) = (idle.iter().min().unwrap(), idle.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
        } else {
            prop_assert_eq!(li, 0);
            prop_assert_eq!(a.counts[0], batch);
        }
    }

    #[test]
    fn jsq_split_is_minimax(
        q in prop::collection::vec(0u64..30, 1..6),
        batch in 0u64..30,
        seed in any::<u64>(),
    ) {
        let state = SystemState::with_queues(q.clone(), 0);
        let mut rng = substream(seed, 0, Substream::PolicyChoice);
        let a = route_jsq(&state, batch, true, &mut rng);
        let post = q.iter().zip(&a.counts).map(|(x, y)| x + y).max().unwrap();
        prop_assert_eq!(post, brute_minimax(&q, batch));
    }

    #[test]
    fn jsq2_uses_at_most_two_servers(
        q in prop::collection::vec(0u64..30, 2..8),
        batch in 1u64..30,
        split in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let state = SystemState::with_queues(q, 0);
        let mut rng = substream(seed, 0, Substream::PolicyChoice);
        let a = route_jsq2(&state, batch, split, &mut rng);
        prop_assert_eq!(a.total(), batch);
        prop_assert!(a.sub_batches() <= 2);
    }

    #[test]
    fn jiq_prefers_idle(
        q in prop::collection::vec(0u64..3, 1..8),
        batch in 1u64..30,
        split in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let state = SystemState::with_queues(q.clone(), 0);
        let mut rng = substream(seed, 0, Substream::PolicyChoice);
        let a = route_jiq(&state, batch, split, &mut rng);
        prop_assert_eq!(a.total(), batch);
        if q.contains(&0) {
            for (&qi, &ai) in q.iter().zip(&a.counts) {
                if qi > 0 {
                    prop_assert_eq!(ai, 0);
                }
            }
        }
    }
}

#[test]
fn jsq2_pair_is_uniform() {
    // With every queue equal, the unsplit batch lands on a uniform server.
    let state = SystemState::with_queues(vec![3; 4], 0);
    let mut rng = substream(5, 0, Substream::PolicyChoice);
    let mut hits = [0u32; 4];
    for _ in 0..40_000 {
        let a = route_jsq2(&state, 1, false, &mut rng);
        hits[a.counts.iter().position(|&c| c == 1).unwrap()] += 1;
    }
    for h in hits {
        assert!((f64::from(h) / 40_000.0 - 0.25).abs() < 0.01, "{hits:?}");
    }
}

#[test]
fn whole_batch_split_rule_reproduces_pi() {
    let params = ModelParams::new(
        DistSpec::poisson(3.0).unwrap(),
        vec![
            DistSpec::deterministic(1),
            DistSpec::uniform_int(1, 3).unwrap(),
            DistSpec::uniform_int(1, 4).unwrap(),
            DistSpec::deterministic(2),
            DistSpec::deterministic(1),
        ],
    )
    .unwrap();
    for seed in 0..5 {
        let opts = || RunOptions {
            keep_events: true,
            ..RunOptions::default()
        };
        let pi = run(&params, Policy::new(PolicySpec::new(Family::Pi, false)), 2000, seed, opts());
        let split = run(
            &params,
            Policy::new(PolicySpec::new(Family::Pi, true)).with_split_rule(SplitRule::WholeToOneIdle),
            2000,
            seed,
            opts(),
        );
        assert_eq!(pi.trace.events, split.trace.events);
        assert_eq!(pi.trace.final_state, split.trace.final_state);
    }
}

#[derive(Debug)]
struct FirstIdle;

impl SplitFunction for FirstIdle {
    fn split(&self, q: &[u64], batch: u64, _b: u64) -> Vec<u64> {
        let mut v = vec![0; q.len()];
        v[q.iter().position(|&x| x == 0).unwrap()] = batch;
        v
    }
}

#[derive(Debug)]
struct Leaky;

impl SplitFunction for Leaky {
    fn split(&self, q: &[u64], batch: u64, _b: u64) -> Vec<u64> {
        vec![batch / 2; q.len()]
    }
}

#[test]
fn custom_split_rules_are_probed() {
    assert!(SplitRule::custom(Arc::new(FirstIdle)).is_ok());
    assert!(SplitRule::custom(Arc::new(Leaky)).is_err());
}
