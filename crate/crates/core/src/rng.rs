//! Counter-based random sources keyed by `(master_seed, shard_index)`.
//!
//! Each simulation shard draws from its own ChaCha8 stream: the master seed
//! selects the key and the shard index selects the stream id, so any shard can
//! be regenerated in isolation and on any thread.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type ShardRng = ChaCha8Rng;

/// Random source for one shard of the cycle index space.
pub fn shard_rng(master_seed: u64, shard_index: u64) -> ShardRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(shard_index);
    rng
}

/// Uniform draw on `[0, 1)`.
#[inline]
pub fn unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

/// Exponential draw with the given mean via the inverse CDF at quantile `u ∈ [0, 1)`.
#[inline]
pub fn exp_from_quantile(mean: f64, u: f64) -> f64 {
    -mean * libm::log1p(-u)
}

/// Number of failures before the first success of a Bernoulli(`p`) sequence.
///
/// Returns `u64::MAX` when `p` is zero.
#[inline]
pub fn geometric_failures<R: RngCore + ?Sized>(rng: &mut R, p: f64) -> u64 {
    if p >= 1.0 {
        return 0;
    }
    if p <= 0.0 {
        return u64::MAX;
    }
    // 1 - u lies in (0, 1], so the log is finite.
    let u = 1.0 - unit(rng);
    let g = libm::floor(libm::log(u) / libm::log1p(-p));
    if g >= u64::MAX as f64 {
        u64::MAX
    } else {
        g as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shards_are_reproducible_and_distinct() {
        let a: u64 = shard_rng(7, 3).next_u64();
        let b: u64 = shard_rng(7, 3).next_u64();
        let c: u64 = shard_rng(7, 4).next_u64();
        let d: u64 = shard_rng(8, 3).next_u64();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn geometric_mean_matches() {
        let mut rng = shard_rng(1, 0);
        let p = 0.01;
        let n = 200_000;
        let mean = (0..n).map(|_| geometric_failures(&mut rng, p) as f64).sum::<f64>() / n as f64;
        let expect = (1.0 - p) / p;
        let sd = ((1.0 - p) / (p * p)).sqrt() / (n as f64).sqrt();
        assert!((mean - expect).abs() < 4.0 * sd, "{mean} vs {expect}");
    }

    #[test]
    fn geometric_edge_probabilities() {
        let mut rng = shard_rng(1, 0);
        assert_eq!(geometric_failures(&mut rng, 1.0), 0);
        assert_eq!(geometric_failures(&mut rng, 0.0), u64::MAX);
    }
}
