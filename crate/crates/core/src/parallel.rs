//! Trial-parallel Monte Carlo with per-trial random streams.
//!
//! Trial `i` always draws from `rng.derive(i)` and results are reduced in
//! trial order, so output does not depend on the number of worker threads.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::rng::RngSpec;
use crate::stats::Moments;

/// Runs `f(i, rng_i)` for `i in 0..trials` and returns results in trial order.
pub fn map_collect<T, F>(trials: usize, rng: RngSpec, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync,
{
    (0..trials)
        .into_par_iter()
        .map(|i| f(i, &mut rng.derive(i as u64).rng()))
        .collect()
}

/// Sample moments of a scalar per-trial statistic.
pub fn map_reduce<F>(trials: usize, rng: RngSpec, f: F) -> Moments
where
    F: Fn(usize, &mut ChaCha8Rng) -> f64 + Sync,
{
    map_collect(trials, rng, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn results_do_not_depend_on_pool_size() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| map_reduce(200, RngSpec::new(9, 0), |_, g| g.random::<f64>()))
        };
        let (a, b) = (run(1), run(3));
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.variance().to_bits(), b.variance().to_bits());
    }
}
