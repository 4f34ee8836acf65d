//! Scaling of the one-time variance and covariance of `N`, and Monte Carlo
//! cross-checks of the series against both samplers.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::regularity::log_lags;
use crate::analysis::series::{covariance_at, variance_of_n};
use crate::error::{Error, Result};
use crate::kernel::RieszKernel;
use crate::noise::{field_at, Lattice, SpectralState};
use crate::parallel;
use crate::rng::RngSpec;
use crate::solver::{lattice_scheme_variance, solve_general, step_grid, SigmaSpec};
use crate::stats::{self, Moments};

/// Monte Carlo estimate of a second moment next to its series value.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MomentComparison {
    pub t1: f64,
    /// Separation; `0` for the variance.
    pub r: f64,
    /// Series over the sampler's own modes.
    pub series: f64,
    pub mc: f64,
    pub mc_se: f64,
    /// `|mc - series| <= 3 mc_se`.
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceScalingReport {
    pub gamma: f64,
    pub modes: usize,
    pub t1s: Vec<f64>,
    pub variances: Vec<f64>,
    /// OLS slope of `log Var` on `log t1`; limit `(2 - gamma)/2`.
    pub variance_slope: f64,
    pub variance_expected: f64,
    /// Time at which the covariance decay is measured.
    pub cov_t1: f64,
    pub separations: Vec<f64>,
    pub covariances: Vec<f64>,
    /// OLS slope of `log Cov` on `log r`; limit `-gamma`.
    pub covariance_slope: f64,
    pub covariance_expected: f64,
    pub monte_carlo: Vec<MomentComparison>,
}

impl VarianceScalingReport {
    pub fn variance_slope_ok(&self) -> bool {
        (self.variance_slope - self.variance_expected).abs() <= 0.05
    }

    pub fn covariance_slope_ok(&self) -> bool {
        (self.covariance_slope - self.covariance_expected).abs() <= 0.1
    }

    pub fn monte_carlo_ok(&self) -> bool {
        self.monte_carlo.iter().all(|c| c.holds)
    }

    pub fn csv_header() -> &'static str {
        "kind,abscissa,value"
    }

    pub fn csv_rows(&self) -> Vec<String> {
        let var = self
            .t1s
            .iter()
            .zip(&self.variances)
            .map(|(t, v)| format!("variance,{t:.17e},{v:.17e}"));
        let cov = self
            .separations
            .iter()
            .zip(&self.covariances)
            .map(|(r, c)| format!("covariance,{r:.17e},{c:.17e}"));
        var.chain(cov).collect()
    }
}

/// Series-based scaling fits plus spectral Monte Carlo at a few points.
///
/// The variance is fitted over 8 times in `[1e-5, 1e-2]`. The covariance is
/// fitted at `t1 = 1e-6` over 8 separations in `[5e-3, 0.5]`, where
/// `sqrt(t1) << r` and the heat smoothing is negligible.
pub fn variance_scaling(
    kernel: &Arc<RieszKernel>,
    trials: usize,
    rng: RngSpec,
) -> Result<VarianceScalingReport> {
    let t1s = log_lags(1e-5, 1e-2, 8);
    let variances = t1s
        .iter()
        .map(|&t| variance_of_n(kernel, t).map(|s| s.value))
        .collect::<Result<Vec<_>>>()?;
    let cov_t1 = 1e-6;
    let separations = log_lags(5e-3, 0.5, 8);
    let covariances = separations
        .iter()
        .map(|&r| covariance_at(kernel, cov_t1, r).map(|s| s.value))
        .collect::<Result<Vec<_>>>()?;
    if variances.iter().chain(&covariances).any(|v| !(*v > 0.0)) {
        return Err(Error::numeric("scaling fit needs positive moments"));
    }
    let logs = |v: &[f64]| v.iter().map(|x| x.ln()).collect::<Vec<_>>();
    let variance_slope = stats::ols(&logs(&t1s), &logs(&variances))?.slope;
    let covariance_slope = stats::ols(&logs(&separations), &logs(&covariances))?.slope;
    let gamma = kernel.gamma();

    let mut monte_carlo = Vec::new();
    if trials >= 2 {
        for (i, &(t1, r)) in [(1e-4, 0.0), (1e-2, 0.0), (1e-3, 0.1), (1e-2, 0.25)].iter().enumerate() {
            monte_carlo.push(spectral_moment(kernel, t1, r, trials, rng.derive(i as u64))?);
        }
    }
    Ok(VarianceScalingReport {
        gamma,
        modes: kernel.mode_count(),
        t1s,
        variances,
        variance_slope,
        variance_expected: (2.0 - gamma) / 2.0,
        cov_t1,
        separations,
        covariances,
        covariance_slope,
        covariance_expected: -gamma,
        monte_carlo,
    })
}

/// `E[N(t1, 0) N(t1, r)]` from exact spectral samples.
pub fn spectral_moment(
    kernel: &Arc<RieszKernel>,
    t1: f64,
    r: f64,
    trials: usize,
    rng: RngSpec,
) -> Result<MomentComparison> {
    if trials < 2 {
        return Err(Error::Config("need >= 2 trials".into()));
    }
    let series = covariance_at(kernel, t1, r)?.truncated;
    let m: Moments = parallel::map_reduce(trials, rng, |_, g| {
        let mut st = SpectralState::zero(kernel.clone());
        st.ou_step(t1, g).expect("validated time");
        field_at(&st.a, &st.b, 0.0) * field_at(&st.a, &st.b, r)
    });
    Ok(MomentComparison {
        t1,
        r,
        series,
        mc: m.mean,
        mc_se: m.stderr(),
        holds: (m.mean - series).abs() <= 3.0 * m.stderr(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatticeVarianceReport {
    pub gamma: f64,
    pub t: f64,
    pub dx: f64,
    pub dt: f64,
    pub steps: usize,
    pub trials: usize,
    /// Series value for the continuum equation.
    pub analytic: f64,
    /// Exact variance of the explicit scheme.
    pub scheme: f64,
    /// `|scheme - analytic|`.
    pub bias: f64,
    pub mc: f64,
    pub mc_se: f64,
    /// `|mc - analytic| <= bias + 3 mc_se`.
    pub holds: bool,
    /// `|mc - scheme| <= 3 mc_se`.
    pub matches_scheme: bool,
}

/// One-point variance of the explicit lattice scheme with `sigma = 1` at time `t`.
pub fn lattice_variance_check(
    kernel: &RieszKernel,
    t: f64,
    dx: f64,
    dt: f64,
    trials: usize,
    rng: RngSpec,
) -> Result<LatticeVarianceReport> {
    if trials < 2 {
        return Err(Error::Config("need >= 2 trials".into()));
    }
    let lattice = Lattice::with_spacing(dx).map_err(|e| Error::Config(e.to_string()))?;
    let (steps, dt) = step_grid(t, dt)?;
    let sigma = SigmaSpec::constant(1.0)?;
    let u0 = vec![0.0; lattice.points];
    let j = lattice.points / 2;
    let samples = parallel::map_collect(trials, rng, |i, _| {
        solve_general(kernel, &sigma, &u0, t, dt, lattice, rng.derive2(u64::MAX, i as u64))
            .map(|p| p.u(steps, j).powi(2))
    });
    let m: Moments = samples.into_iter().collect::<Result<Vec<f64>>>()?.into_iter().collect();
    let analytic = variance_of_n(kernel, t)?.value;
    let scheme = lattice_scheme_variance(kernel, lattice.dx(), dt, steps);
    let bias = (scheme - analytic).abs();
    let se = m.stderr();
    Ok(LatticeVarianceReport {
        gamma: kernel.gamma(),
        t,
        dx: lattice.dx(),
        dt,
        steps,
        trials,
        analytic,
        scheme,
        bias,
        mc: m.mean,
        mc_se: se,
        holds: (m.mean - analytic).abs() <= bias + 3.0 * se,
        matches_scheme: (m.mean - scheme).abs() <= 3.0 * se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_slopes_match_their_limits() {
        let k = Arc::new(RieszKernel::new(0.5, 1024).unwrap());
        let r = variance_scaling(&k, 0, RngSpec::new(1, 0)).unwrap();
        assert!(r.variance_slope_ok(), "{}", r.variance_slope);
        assert!(r.covariance_slope_ok(), "{}", r.covariance_slope);
        assert!(r.monte_carlo.is_empty());
    }

    #[test]
    fn spectral_moments_agree_with_series() {
        let k = Arc::new(RieszKernel::new(0.25, 256).unwrap());
        let c = spectral_moment(&k, 1e-3, 0.1, 4000, RngSpec::new(2, 0)).unwrap();
        assert!((c.mc - c.series).abs() <= 4.0 * c.mc_se, "{c:?}");
    }

    #[test]
    fn lattice_variance_matches_scheme() {
        let k = RieszKernel::new(0.5, 256).unwrap();
        let r = lattice_variance_check(&k, 1e-3, 1.0 / 32.0, 1e-4, 2000, RngSpec::new(3, 0)).unwrap();
        assert!((r.mc - r.scheme).abs() <= 4.0 * r.mc_se, "{r:?}");
        assert_eq!(r.steps, 10);
    }
}
