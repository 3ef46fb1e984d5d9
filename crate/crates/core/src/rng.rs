//! Deterministic randomness.
//!
//! Every consumer derives its own ChaCha stream from (master seed, purpose,
//! index), so independent pipeline stages never share draws, reruns replay
//! bit for bit, and a training run resumed from step t continues on exactly
//! the stream it would have used uninterrupted.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keeping independent consumers off each other's streams.
pub mod purpose {
    pub const CLASSIFIER_INIT: u64 = 1;
    pub const ESTIMATOR_INIT: u64 = 2;
    /// Per-step batch sampling in the bi-level trainer.
    pub const BATCH: u64 = 3;
    pub const GEN_TRAIN: u64 = 4;
    pub const GEN_VAL: u64 = 5;
    pub const GEN_TEST: u64 = 6;
    pub const ANNOTATE: u64 = 7;
    /// Per-step batch sampling in the single-level trainers.
    pub const SGD: u64 = 8;
    pub const ENSEMBLE_MEMBER: u64 = 9;
}

/// SplitMix64 finalizer; decorrelates nearby seeds.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A seed speciated by purpose; equal masters with different purposes
/// produce unrelated seeds.
pub fn derive_seed(master: u64, purpose: u64) -> u64 {
    splitmix(master ^ splitmix(purpose))
}

/// A seed speciated by purpose and position (annotator index, ensemble
/// member, ...).
pub fn derive_indexed_seed(master: u64, purpose: u64, index: u64) -> u64 {
    splitmix(derive_seed(master, purpose) ^ splitmix(index.wrapping_add(0x9e37)))
}

/// The generator for (master, purpose) at stream `index`. Streams with
/// different indices are independent, so per-step generators can be
/// reconstructed from a step counter alone.
pub fn stream(master: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master, purpose));
    rng.set_stream(index);
    rng
}

/// One draw from N(0, 1) via Box-Muller.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // u1 is kept away from zero so the log stays finite.
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use rand::Rng;

    #[test]
    fn streams_replay_bit_for_bit() {
        let a: Vec<u64> = stream(7, purpose::BATCH, 3).random_iter().take(16).collect();
        let b: Vec<u64> = stream(7, purpose::BATCH, 3).random_iter().take(16).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn purposes_are_decorrelated() {
        let a: u64 = stream(7, purpose::BATCH, 0).random();
        let b: u64 = stream(7, purpose::ANNOTATE, 0).random();
        assert_ne!(a, b);
    }

    #[test]
    fn stream_indices_are_decorrelated() {
        let a: u64 = stream(7, purpose::BATCH, 0).random();
        let b: u64 = stream(7, purpose::BATCH, 1).random();
        assert_ne!(a, b);
    }

    #[test]
    fn derived_seeds_differ_across_masters_and_indices() {
        assert_ne!(derive_seed(0, 1), derive_seed(1, 1));
        assert_ne!(
            derive_indexed_seed(0, 1, 0),
            derive_indexed_seed(0, 1, 1)
        );
    }

    #[test]
    fn standard_normal_has_plausible_moments() {
        let mut rng = stream(123, purpose::GEN_TRAIN, 0);
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
        assert!(draws.iter().all(|x| x.is_finite()));
    }
}
