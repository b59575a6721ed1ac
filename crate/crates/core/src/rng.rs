//! Seeded random streams, one per role.
//!
//! Every stream is a ChaCha8 generator keyed by the master seed and told
//! apart by its 64-bit stream id, so streams are independent by
//! construction and a policy that draws more or fewer numbers never shifts
//! the arrival or capacity sequences.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ROLE_ARRIVAL: u64 = 0;
const ROLE_TIE_BREAK: u64 = 1;
const ROLE_POLICY: u64 = 2;
const ROLE_CAPACITY_BASE: u64 = 16;

/// A named substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Substream {
    Arrival,
    /// Capacity of server `i` (0-based).
    Capacity(usize),
    TieBreak,
    PolicyChoice,
}

impl Substream {
    fn role(self) -> u64 {
        match self {
            Substream::Arrival => ROLE_ARRIVAL,
            Substream::TieBreak => ROLE_TIE_BREAK,
            Substream::PolicyChoice => ROLE_POLICY,
            Substream::Capacity(i) => ROLE_CAPACITY_BASE + i as u64,
        }
    }
}

/// Builds one substream. `replica` separates independent copies that share
/// a master seed (Monte Carlo episodes); ordinary runs use replica 0.
pub fn substream(master_seed: u64, replica: u32, which: Substream) -> ChaCha8Rng {
    let role = which.role();
    assert!(role < 1 << 32, "too many servers for the stream layout");
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((u64::from(replica) << 32) | role);
    rng
}

/// All streams one simulation needs.
#[derive(Debug, Clone)]
pub struct RngStreams {
    pub master_seed: u64,
    pub replica: u32,
    pub arrival: ChaCha8Rng,
    pub capacity: Vec<ChaCha8Rng>,
    pub tie_break: ChaCha8Rng,
    pub policy: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(master_seed: u64, n: usize) -> Self {
        Self::for_replica(master_seed, 0, n)
    }

    pub fn for_replica(master_seed: u64, replica: u32, n: usize) -> Self {
        RngStreams {
            master_seed,
            replica,
            arrival: substream(master_seed, replica, Substream::Arrival),
            capacity: (0..n)
                .map(|i| substream(master_seed, replica, Substream::Capacity(i)))
                .collect(),
            tie_break: substream(master_seed, replica, Substream::TieBreak),
            policy: substream(master_seed, replica, Substream::PolicyChoice),
        }
    }
}

/// Maps a raw 64-bit draw onto `0..k` by multiply-shift.
pub fn reduce(raw: u64, k: usize) -> usize {
    ((u128::from(raw) * k as u128) >> 64) as usize
}

/// Draws an index uniform on `0..k` and returns it with the raw draw it
/// was computed from, so that `reduce(raw, k) == index`.
///
/// Draws that would bias the multiply-shift map are rejected, which makes
/// the index exactly uniform.
pub fn uniform_index<R: RngCore + ?Sized>(k: usize, rng: &mut R) -> (usize, u64) {
    assert!(k > 0, "uniform_index over an empty range");
    let k64 = k as u64;
    let threshold = k64.wrapping_neg() % k64;
    loop {
        let raw = rng.next_u64();
        let wide = u128::from(raw) * u128::from(k64);
        if (wide as u64) >= threshold {
            return ((wide >> 64) as usize, raw);
        }
    }
}

/// Picks one candidate uniformly at random.
pub fn tie_break_uniform<R: RngCore + ?Sized>(candidates: &[usize], rng: &mut R) -> usize {
    assert!(!candidates.is_empty(), "tie break over an empty candidate set");
    if candidates.len() == 1 {
        return candidates[0];
    }
    candidates[uniform_index(candidates.len(), rng).0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn singleton() {
        let mut rng = substream(1, 0, Substream::TieBreak);
        assert_eq!(tie_break_uniform(&[3], &mut rng), 3);
    }

    #[test]
    fn pair_is_fair() {
        let mut rng = substream(2, 0, Substream::TieBreak);
        let n = 100_000;
        let firsts = (0..n)
            .filter(|_| tie_break_uniform(&[0, 1], &mut rng) == 0)
            .count();
        assert!((firsts as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn triple_passes_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut rng = substream(3, 0, Substream::TieBreak);
        let n = 90_000;
        let mut counts = [0u64; 3];
        for _ in 0..n {
            counts[tie_break_uniform(&[0, 1, 2], &mut rng)] += 1;
        }
        let expected = n as f64 / 3.0;
        let stat: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let critical = ChiSquared::new(2.0).unwrap().inverse_cdf(0.999);
        assert!(stat < critical, "chi-square {stat} >= {critical}");
    }

    #[test]
    fn raw_draw_reproduces_index() {
        let mut rng = substream(4, 0, Substream::TieBreak);
        for k in 1..50 {
            let (i, raw) = uniform_index(k, &mut rng);
            assert!(i < k);
            assert_eq!(reduce(raw, k), i);
        }
    }

    #[test]
    fn streams_differ_by_role_and_replica() {
        let a: u64 = substream(9, 0, Substream::Arrival).random();
        let b: u64 = substream(9, 0, Substream::TieBreak).random();
        let c: u64 = substream(9, 1, Substream::Arrival).random();
        let a2: u64 = substream(9, 0, Substream::Arrival).random();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, a2);
    }
}
