//! Mean-square increments of the stochastic convolution `N` with `sigma = 1`.
//!
//! `N(t, x) = a_0 + sum_n a_n cos(n pi x) + b_n sin(n pi x)` with independent
//! OU amplitudes started at zero, so increments are sampled exactly and the
//! mean-square increment also has a closed spectral form used as an oracle.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::RieszKernel;
use crate::noise::{field_at, mode_variance, SpectralState};
use crate::parallel;
use crate::rng::RngSpec;
use crate::stats::{self, Moments};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Space,
    Time,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegularityReport {
    pub gamma: f64,
    pub direction: Direction,
    /// Base time `t` and position `x`; space lags are added to `x`, time
    /// lags to `t`.
    pub t: f64,
    pub x: f64,
    pub trials: usize,
    pub lags: Vec<f64>,
    /// Monte Carlo mean-square increments and their standard errors.
    pub msq: Vec<f64>,
    pub msq_se: Vec<f64>,
    /// Spectral value of the same quantity for the truncated kernel.
    pub msq_exact: Vec<f64>,
    /// OLS slope of `log msq` on `log lag`.
    pub slope: f64,
    pub slope_exact: f64,
    /// Worst-case propagation of the per-lag Monte Carlo errors into the slope.
    pub slope_mc_se: f64,
    /// `2 - gamma` in space, `(2 - gamma)/2` in time.
    pub expected: f64,
    /// Monte Carlo error too large for the slope to be meaningful.
    pub inconclusive: bool,
}

/// Exponent of the mean-square increment in each direction.
pub fn expected_slope(gamma: f64, direction: Direction) -> f64 {
    match direction {
        Direction::Space => 2.0 - gamma,
        Direction::Time => (2.0 - gamma) / 2.0,
    }
}

/// `E[(N(t, x + h) - N(t, x))^2]` for the truncated kernel.
pub fn space_msq(kernel: &RieszKernel, t: f64, h: f64) -> f64 {
    kernel
        .q()
        .iter()
        .enumerate()
        .skip(1)
        .map(|(n, &q)| mode_variance(q, n, t) * 2.0 * (1.0 - (n as f64 * PI * h).cos()))
        .sum()
}

/// `E[(N(t + d, x) - N(t, x))^2]` for the truncated kernel.
pub fn time_msq(kernel: &RieszKernel, t: f64, d: f64) -> f64 {
    kernel
        .q()
        .iter()
        .enumerate()
        .map(|(n, &q)| {
            let keep = (-PI * PI * (n * n) as f64 * d).exp();
            (1.0 - keep).powi(2) * mode_variance(q, n, t) + mode_variance(q, n, d)
        })
        .sum()
}

/// Log-spaced lags from `lo` to `hi` inclusive.
pub fn log_lags(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1).max(1) as f64).exp())
        .collect()
}

fn check_lags(lags: &[f64]) -> Result<()> {
    if lags.len() < 6 {
        return Err(Error::Config(format!("need >= 6 lags, got {}", lags.len())));
    }
    if lags.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::Config("lags must be positive and finite".into()));
    }
    let (lo, hi) = lags
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &l| (lo.min(l), hi.max(l)));
    if (hi / lo).log10() < 1.5 {
        return Err(Error::Config(format!(
            "lags span {:.2} decades; need >= 1.5",
            (hi / lo).log10()
        )));
    }
    Ok(())
}

/// Monte Carlo scan of the mean-square increment against lag.
///
/// Every lag uses the same trials: in space one field sample at time `t`
/// serves all lags, in time each lag continues the same state at `t`.
pub fn regularity_scan(
    kernel: &Arc<RieszKernel>,
    direction: Direction,
    t: f64,
    x: f64,
    lags: &[f64],
    trials: usize,
    rng: RngSpec,
) -> Result<RegularityReport> {
    check_lags(lags)?;
    if !(t > 0.0) || !t.is_finite() || !x.is_finite() {
        return Err(Error::Config(format!("need t > 0 and finite x, got t = {t}, x = {x}")));
    }
    if trials < 2 {
        return Err(Error::Config("need >= 2 trials".into()));
    }
    let samples: Vec<Vec<f64>> = parallel::map_collect(trials, rng, |_, r| {
        let mut st = SpectralState::zero(kernel.clone());
        st.ou_step(t, r).expect("validated step");
        let base = field_at(&st.a, &st.b, x);
        lags.iter()
            .map(|&h| {
                let other = match direction {
                    Direction::Space => field_at(&st.a, &st.b, x + h),
                    Direction::Time => {
                        let mut later = st.clone();
                        later.ou_step(h, r).expect("validated step");
                        field_at(&later.a, &later.b, x)
                    }
                };
                (other - base).powi(2)
            })
            .collect()
    });
    let moments: Vec<Moments> = (0..lags.len())
        .map(|k| samples.iter().map(|s| s[k]).collect())
        .collect();
    let msq: Vec<f64> = moments.iter().map(|m| m.mean).collect();
    let msq_se: Vec<f64> = moments.iter().map(|m| m.stderr()).collect();
    let msq_exact: Vec<f64> = lags
        .iter()
        .map(|&h| match direction {
            Direction::Space => space_msq(kernel, t, h),
            Direction::Time => time_msq(kernel, t, h),
        })
        .collect();
    if msq.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::numeric("mean-square increment is not positive"));
    }
    let xs: Vec<f64> = lags.iter().map(|l| l.ln()).collect();
    let ys: Vec<f64> = msq.iter().map(|m| m.ln()).collect();
    let fit = stats::ols(&xs, &ys)?;
    let exact_ys: Vec<f64> = msq_exact.iter().map(|m| m.ln()).collect();
    let slope_exact = stats::ols(&xs, &exact_ys)?.slope;

    // The per-lag errors share trials, so bound the slope error by the
    // fully correlated sum of |OLS weight| * SE(log msq).
    let xbar = xs.iter().sum::<f64>() / xs.len() as f64;
    let sxx: f64 = xs.iter().map(|v| (v - xbar).powi(2)).sum();
    let slope_mc_se: f64 = xs
        .iter()
        .zip(msq.iter().zip(&msq_se))
        .map(|(v, (m, se))| ((v - xbar) / sxx).abs() * se / m)
        .sum();
    let expected = expected_slope(kernel.gamma(), direction);
    Ok(RegularityReport {
        gamma: kernel.gamma(),
        direction,
        t,
        x,
        trials,
        lags: lags.to_vec(),
        msq,
        msq_se,
        msq_exact,
        slope: fit.slope,
        slope_exact,
        slope_mc_se,
        expected,
        inconclusive: slope_mc_se > SLOPE_TOLERANCE,
    })
}

/// Allowed deviation of a fitted regularity slope from its limit.
pub const SLOPE_TOLERANCE: f64 = 0.1;

impl RegularityReport {
    pub fn within_tolerance(&self) -> bool {
        !self.inconclusive && (self.slope - self.expected).abs() <= SLOPE_TOLERANCE
    }

    pub fn csv_header() -> &'static str {
        "direction,lag,msq,msq_se,msq_exact"
    }

    pub fn csv_rows(&self) -> Vec<String> {
        let dir = match self.direction {
            Direction::Space => "space",
            Direction::Time => "time",
        };
        (0..self.lags.len())
            .map(|k| {
                format!(
                    "{dir},{:.17e},{:.17e},{:.17e},{:.17e}",
                    self.lags[k], self.msq[k], self.msq_se[k], self.msq_exact[k]
                )
            })
            .collect()
    }
}

/// Lags used when none are given: 1.7 decades in space, 3 in time.
pub fn default_lags(direction: Direction) -> Vec<f64> {
    match direction {
        Direction::Space => log_lags(2e-3, 0.1, 8),
        Direction::Time => log_lags(1e-6, 1e-3, 8),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lag_has_zero_msq() {
        let k = RieszKernel::new(0.5, 256).unwrap();
        assert_eq!(space_msq(&k, 0.1, 0.0), 0.0);
        assert_eq!(time_msq(&k, 0.1, 0.0), 0.0);
    }

    #[test]
    fn space_msq_is_periodic_and_symmetric() {
        let k = RieszKernel::new(0.5, 256).unwrap();
        let a = space_msq(&k, 0.05, 0.3);
        assert!((a - space_msq(&k, 0.05, -0.3)).abs() < 1e-14);
        assert!((a - space_msq(&k, 0.05, 2.3)).abs() < 1e-12);
    }

    #[test]
    fn time_msq_matches_variance_when_started_at_zero() {
        // From t -> 0 the increment is N(d) itself.
        let k = RieszKernel::new(0.5, 256).unwrap();
        let d = 1e-3;
        let var: f64 = k.q().iter().enumerate().map(|(n, &q)| mode_variance(q, n, d)).sum();
        assert!((time_msq(&k, 0.0, d) - var).abs() < 1e-15);
    }

    #[test]
    fn rejects_short_lag_ranges() {
        let k = Arc::new(RieszKernel::new(0.5, 64).unwrap());
        let lags = log_lags(0.01, 0.1, 8);
        assert!(regularity_scan(&k, Direction::Space, 0.1, 0.0, &lags, 10, RngSpec::new(1, 0)).is_err());
        let lags = log_lags(0.001, 0.1, 5);
        assert!(regularity_scan(&k, Direction::Space, 0.1, 0.0, &lags, 10, RngSpec::new(1, 0)).is_err());
    }

    #[test]
    fn monte_carlo_agrees_with_spectral_value() {
        let k = Arc::new(RieszKernel::new(0.5, 512).unwrap());
        let lags = log_lags(1e-3, 0.1, 6);
        let r = regularity_scan(&k, Direction::Space, 0.1, 0.2, &lags, 2000, RngSpec::new(4, 0)).unwrap();
        for i in 0..lags.len() {
            assert!((r.msq[i] - r.msq_exact[i]).abs() <= 4.0 * r.msq_se[i], "lag {}", lags[i]);
        }
    }
}
