//! Monte-Carlo primitives: estimates with standard errors and a
//! deterministic parallel reduction.
//!
//! Reproducibility contract: every estimator derives one RNG per sample
//! index from `(seed, stream_id, index)`, accumulates per-chunk sums
//! sequentially over fixed-size index chunks, and folds the chunk sums in
//! index order. The result is bit-identical for any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::sampling::RngStream;

/// Sample mean with its standard error; the unit of every stochastic
/// computation in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: u64,
}

impl McEstimate {
    pub fn from_sums(sum: f64, sum_sq: f64, n: u64) -> Self {
        assert!(n >= 1, "estimate needs at least one sample");
        let nf = n as f64;
        let mean = sum / nf;
        let var = if n > 1 {
            ((sum_sq - sum * sum / nf) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        McEstimate { mean, std_error: (var / nf).sqrt(), n }
    }

    /// Half-width of the `k`-sigma interval.
    pub fn half_width(&self, k: f64) -> f64 {
        k * self.std_error
    }

    /// Whether `value` lies within `k` standard errors of the mean.
    pub fn consistent_with(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_error
    }
}

const CHUNK: u64 = 8192;

/// Deterministic parallel mean over `n` samples. `eval` maps a
/// per-sample RNG (derived from the stream and the sample index) to one
/// draw of the integrand.
pub fn parallel_estimate<F>(stream: RngStream, n: u64, eval: F) -> McEstimate
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let partials: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for idx in lo..hi {
                let mut rng = stream.sample_rng(idx);
                let v = eval(&mut rng);
                sum += v;
                sum_sq += v * v;
            }
            (sum, sum_sq)
        })
        .collect();
    let (sum, sum_sq) = partials
        .iter()
        .fold((0.0, 0.0), |(a, b), &(s, q)| (a + s, b + q));
    McEstimate::from_sums(sum, sum_sq, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_sums_basic() {
        // samples 1, 2, 3: mean 2, sample variance 1, se 1/sqrt(3)
        let e = McEstimate::from_sums(6.0, 14.0, 3);
        assert!((e.mean - 2.0).abs() < 1e-15);
        assert!((e.std_error - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn reduction_is_deterministic_across_thread_pools() {
        let stream = RngStream::new(7, 3);
        let eval = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
            use rand::Rng;
            rng.random::<f64>() - 0.5
        };
        let a = parallel_estimate(stream, 100_000, eval);
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = single.install(|| parallel_estimate(stream, 100_000, eval));
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }
}
