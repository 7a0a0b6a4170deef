//! The randomness contract.
//!
//! Every randomized operation takes an explicit `u64` seed and draws from
//! ChaCha8 (a 64-bit counter-based generator) seeded with
//! `ChaCha8Rng::seed_from_u64(seed)`. Independent sub-streams are obtained
//! with [`stream`], which selects the ChaCha stream id, so two streams of the
//! same seed never overlap. Stream ids are namespaced: the high 32 bits name
//! the purpose, the low 32 bits index the item (generator, sample chunk, ...).
//!
//! The integer and float conversions below are spelled out rather than taken
//! from `rand`'s distribution machinery so that the exact draws can be
//! reproduced by another implementation of the same contract.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub use rand_chacha::ChaCha8Rng as Rng;

/// Stream namespaces used across the crate.
pub mod ns {
    pub const PERMUTATION: u32 = 1;
    pub const PARTITION_BLOCK: u32 = 2;
    pub const MC_COUNT: u32 = 3;
    pub const MEASURE_SAMPLE: u32 = 4;
    pub const VERTEX_PAIRS: u32 = 5;
    pub const SPECTRAL_START: u32 = 6;
    pub const EXPERIMENT: u32 = 7;
}

pub fn stream_id(namespace: u32, index: u32) -> u64 {
    (u64::from(namespace) << 32) | u64::from(index)
}

/// A generator for the given seed positioned on sub-stream `(namespace, index)`.
pub fn stream(seed: u64, namespace: u32, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(namespace, index));
    rng
}

/// Derives a child seed, for handing a fresh seed to a nested operation.
pub fn derive_seed(seed: u64, namespace: u32, index: u32) -> u64 {
    stream(seed, namespace, index).next_u64()
}

/// Uniform integer in `0..bound` by rejection sampling on 64-bit words.
pub fn uniform_below<R: RngCore>(rng: &mut R, bound: u64) -> u64 {
    assert!(bound > 0, "empty range");
    // Largest multiple of `bound` representable; draws at or above it are rejected.
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let x = rng.next_u64();
        if x < zone {
            return x % bound;
        }
    }
}

/// Uniform double in `[0, 1)` from the top 53 bits of one word.
pub fn uniform_f64<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// In-place Fisher–Yates shuffle, swapping from the last position down.
pub fn fisher_yates<T, R: RngCore>(rng: &mut R, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

/// Inverse-CDF draw from a categorical distribution given its cumulative sums.
pub fn categorical<R: RngCore>(rng: &mut R, cumulative: &[f64]) -> usize {
    let u = uniform_f64(rng) * cumulative[cumulative.len() - 1];
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}

pub fn cumulative(weights: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .scan(0.0, |acc, &w| {
            *acc += w;
            Some(*acc)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| 0).scan(stream(7, 1, 0), |r, _| Some(r.next_u64())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(stream(7, 1, 0), |r, _| Some(r.next_u64())).collect();
        let c: Vec<u64> = (0..4).map(|_| 0).scan(stream(7, 1, 1), |r, _| Some(r.next_u64())).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_below_covers_range() {
        let mut rng = stream(1, 0, 0);
        let mut seen = [0usize; 5];
        for _ in 0..5000 {
            seen[uniform_below(&mut rng, 5) as usize] += 1;
        }
        assert!(seen.iter().all(|&c| c > 800 && c < 1200), "{seen:?}");
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = stream(3, 0, 0);
        let mut v: Vec<usize> = (0..100).collect();
        fisher_yates(&mut rng, &mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }

    #[test]
    fn categorical_respects_zero_weights() {
        let mut rng = stream(5, 0, 0);
        let cum = cumulative(&[0.0, 1.0, 0.0]);
        for _ in 0..100 {
            assert_eq!(categorical(&mut rng, &cum), 1);
        }
    }
}
