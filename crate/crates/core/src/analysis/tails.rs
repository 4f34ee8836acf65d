//! Tail checks for increments of `N` and for its sup over a small space-time
//! patch `[0, beta eps^4] x [0, eps^2]`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::RieszKernel;
use crate::noise::{field_at, OuTransition, SpectralState};
use crate::parallel;
use crate::rng::RngSpec;
use crate::stats;

/// Fewer exceedances than this leave a level out of the fits.
pub const MIN_EXCEEDANCES: u64 = 10;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub t: f64,
    pub x: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailLevel {
    pub lambda: f64,
    pub exceedances: u64,
    pub frequency: f64,
    /// Rule-of-three upper bound when there are no exceedances.
    pub upper_bound: Option<f64>,
}

fn levels(samples: &[f64], lambdas: &[f64]) -> Vec<TailLevel> {
    let n = samples.len() as f64;
    lambdas
        .iter()
        .map(|&lambda| {
            let exceedances = samples.iter().filter(|&&s| s > lambda).count() as u64;
            TailLevel {
                lambda,
                exceedances,
                frequency: exceedances as f64 / n,
                upper_bound: (exceedances == 0).then(|| (3.0 / n).min(1.0)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IncrementTailReport {
    pub gamma: f64,
    pub p: SpaceTimePoint,
    pub q: SpaceTimePoint,
    pub trials: usize,
    /// Exact second moment of `N(q) - N(p)` for the truncated kernel.
    pub msq: f64,
    pub msq_empirical: f64,
    /// Thresholds are `lambda_k = z_k sqrt(msq)`.
    pub levels: Vec<TailLevel>,
    /// Envelope `c1 exp(-c2 lambda^2 / msq)`: `c2` from the log-linear fit,
    /// `c1` the smallest prefactor lying above every observed frequency.
    pub c1: f64,
    pub c2: f64,
    pub envelope_holds: bool,
    /// Some levels had too few exceedances and only carry an upper bound.
    pub one_sided: bool,
}

/// Second moment of `N(q) - N(p)` with `p.t <= q.t`.
fn increment_msq(kernel: &RieszKernel, p: SpaceTimePoint, q: SpaceTimePoint) -> f64 {
    let d = q.t - p.t;
    kernel
        .q()
        .iter()
        .enumerate()
        .map(|(n, &qn)| {
            let vs = crate::noise::mode_variance(qn, n, p.t);
            let vd = crate::noise::mode_variance(qn, n, d);
            if n == 0 {
                return vd;
            }
            let keep = (-PI * PI * (n * n) as f64 * d).exp();
            // a(q) = keep a(p) + fresh; the trig factors give the cross term.
            let c = (n as f64 * PI * (q.x - p.x)).cos();
            vs * (1.0 + keep * keep - 2.0 * keep * c) + vd
        })
        .sum()
}

/// Empirical two-sided tail of `N(q) - N(p)` against a Gaussian envelope.
///
/// `zs` are thresholds in units of the increment's standard deviation.
pub fn increment_tail_check(
    kernel: &Arc<RieszKernel>,
    p: SpaceTimePoint,
    q: SpaceTimePoint,
    zs: &[f64],
    trials: usize,
    rng: RngSpec,
) -> Result<IncrementTailReport> {
    let (p, q) = if p.t <= q.t { (p, q) } else { (q, p) };
    if !(p.t > 0.0) || !q.t.is_finite() || !p.x.is_finite() || !q.x.is_finite() {
        return Err(Error::Config("increment points need t > 0 and finite coordinates".into()));
    }
    if zs.is_empty() || zs.iter().any(|z| !(*z >= 0.0)) || trials < 2 {
        return Err(Error::Config("need thresholds >= 0 and >= 2 trials".into()));
    }
    let msq = increment_msq(kernel, p, q);
    if !(msq > 0.0) {
        return Err(Error::numeric("increment has zero variance"));
    }
    let diffs: Vec<f64> = parallel::map_collect(trials, rng, |_, r| {
        let mut st = SpectralState::zero(kernel.clone());
        st.ou_step(p.t, r).expect("validated step");
        let first = field_at(&st.a, &st.b, p.x);
        if q.t > p.t {
            st.ou_step(q.t - p.t, r).expect("validated step");
        }
        (field_at(&st.a, &st.b, q.x) - first).abs()
    });
    let msq_empirical = diffs.iter().map(|d| d * d).sum::<f64>() / trials as f64;
    let sd = msq.sqrt();
    let lambdas: Vec<f64> = zs.iter().map(|z| z * sd).collect();
    let levels = levels(&diffs, &lambdas);
    let (c1, c2) = gaussian_envelope(&levels, msq)?;
    Ok(IncrementTailReport {
        gamma: kernel.gamma(),
        p,
        q,
        trials,
        msq,
        msq_empirical,
        one_sided: levels.iter().any(|l| l.exceedances < MIN_EXCEEDANCES),
        envelope_holds: c1 <= 2.0 && c2 > 0.0,
        levels,
        c1,
        c2,
    })
}

/// Fits `log freq = log c - c2 lambda^2 / scale` on well-populated levels and
/// lifts the prefactor until the envelope dominates every observed level.
fn gaussian_envelope(levels: &[TailLevel], scale: f64) -> Result<(f64, f64)> {
    let used: Vec<&TailLevel> = levels
        .iter()
        .filter(|l| l.exceedances >= MIN_EXCEEDANCES && l.lambda > 0.0)
        .collect();
    if used.len() < 2 {
        return Err(Error::Fit(format!(
            "need >= 2 levels with >= {MIN_EXCEEDANCES} exceedances, got {}",
            used.len()
        )));
    }
    let xs: Vec<f64> = used.iter().map(|l| l.lambda * l.lambda / scale).collect();
    let ys: Vec<f64> = used.iter().map(|l| l.frequency.ln()).collect();
    let c2 = -stats::ols(&xs, &ys)?.slope;
    let c1 = levels
        .iter()
        .filter(|l| l.exceedances > 0)
        .map(|l| l.frequency * (c2 * l.lambda * l.lambda / scale).exp())
        .fold(0.0, f64::max);
    Ok((c1, c2))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PatchSpec {
    pub beta: f64,
    pub epsilon: f64,
    /// Time steps across `[0, beta eps^4]`.
    pub time_steps: usize,
    /// Points across `[0, eps^2]`, endpoints included.
    pub space_points: usize,
}

impl PatchSpec {
    pub fn new(beta: f64, epsilon: f64) -> Self {
        PatchSpec {
            beta,
            epsilon,
            time_steps: 16,
            space_points: 9,
        }
    }

    pub fn duration(&self) -> f64 {
        self.beta * self.epsilon.powi(4)
    }

    fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.epsilon > 0.0) || !self.duration().is_finite() {
            return Err(Error::Config("need beta > 0 and eps > 0".into()));
        }
        if self.duration() > 1.0 {
            return Err(Error::Config(format!(
                "beta eps^4 = {} exceeds 1",
                self.duration()
            )));
        }
        if self.time_steps == 0 || self.space_points < 2 {
            return Err(Error::Config("patch needs >= 1 step and >= 2 points".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupTailReport {
    pub gamma: f64,
    pub patch: PatchSpec,
    pub trials: usize,
    /// Thresholds in units of `eps^{2 - gamma}`.
    pub levels: Vec<TailLevel>,
    /// Exceedances of `|N(beta eps^4, 0)|` at the same thresholds.
    pub point_levels: Vec<TailLevel>,
    /// Minus the slope of `log freq` against `lambda^2`.
    pub lambda2_slope: f64,
    /// Prefactor lifting `c1 exp(-lambda2_slope lambda^2)` above every level.
    pub c1: f64,
    /// Decaying envelope with a finite prefactor. A sup over many points
    /// carries a prefactor above 2, so `c1` is not bounded further.
    pub envelope_holds: bool,
    pub fit_points: usize,
    /// Patch sup dominates the single-point value on every trial.
    pub ordering_holds: bool,
}

/// Patch sup of `|N| / eps^{2-gamma}` and the end-point value, one pair per trial.
fn patch_samples(
    kernel: &Arc<RieszKernel>,
    patch: &PatchSpec,
    trials: usize,
    rng: RngSpec,
) -> Result<Vec<(f64, f64)>> {
    patch.validate()?;
    let unit = patch.epsilon.powf(2.0 - kernel.gamma());
    let dt = patch.duration() / patch.time_steps as f64;
    let tr = OuTransition::new(kernel, dt)?;
    let e2 = patch.epsilon * patch.epsilon;
    let xs: Vec<f64> = (0..patch.space_points)
        .map(|j| e2 * j as f64 / (patch.space_points - 1) as f64)
        .collect();
    // Trig tables: the field on the patch is a dense matrix-vector product.
    let modes = kernel.mode_count() + 1;
    let cos: Vec<f64> = xs
        .iter()
        .flat_map(|&x| (0..modes).map(move |n| (n as f64 * PI * x).cos()))
        .collect();
    let sin: Vec<f64> = xs
        .iter()
        .flat_map(|&x| (0..modes).map(move |n| (n as f64 * PI * x).sin()))
        .collect();
    Ok(parallel::map_collect(trials, rng, |_, r| {
        let mut st = SpectralState::zero(kernel.clone());
        let mut sup = 0.0f64;
        let mut end = 0.0;
        for _ in 0..patch.time_steps {
            st.advance(&tr, r);
            for j in 0..xs.len() {
                let row = j * modes;
                let v: f64 = (0..modes)
                    .map(|n| st.a[n] * cos[row + n] + st.b[n] * sin[row + n])
                    .sum();
                sup = sup.max(v.abs());
                if j == 0 {
                    end = v.abs();
                }
            }
        }
        (sup / unit, end / unit)
    }))
}

/// Empirical quantiles of the patch sup, as thresholds covering the given
/// exceedance probabilities.
pub fn quantile_lambdas(samples: &[f64], probs: &[f64]) -> Vec<f64> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    probs
        .iter()
        .map(|&p| {
            let k = ((1.0 - p) * (s.len() - 1) as f64).round() as usize;
            s[k.min(s.len() - 1)]
        })
        .collect()
}

/// Exceedance probabilities spanned by the automatic thresholds.
pub const DEFAULT_PROBS: [f64; 6] = [0.3, 0.15, 0.07, 0.03, 0.015, 0.007];

/// Patch-sup tail at thresholds `lambda eps^{2-gamma}`.
///
/// With an empty `lambdas` the thresholds are the empirical quantiles of the
/// sup at [`DEFAULT_PROBS`], so runs at different `beta` fit the same part of
/// their own distribution.
pub fn sup_tail_check(
    kernel: &Arc<RieszKernel>,
    patch: PatchSpec,
    lambdas: &[f64],
    trials: usize,
    rng: RngSpec,
) -> Result<SupTailReport> {
    if trials < 2 {
        return Err(Error::Config("need >= 2 trials".into()));
    }
    let samples = patch_samples(kernel, &patch, trials, rng)?;
    let sups: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let ends: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let lambdas = if lambdas.is_empty() {
        quantile_lambdas(&sups, &DEFAULT_PROBS)
    } else {
        lambdas.to_vec()
    };
    let levels = levels(&sups, &lambdas);
    let point_levels = self::levels(&ends, &lambdas);
    let fit_points = levels
        .iter()
        .filter(|l| l.exceedances >= MIN_EXCEEDANCES && l.lambda > 0.0)
        .count();
    let (c1, c2) = gaussian_envelope(&levels, 1.0)?;
    Ok(SupTailReport {
        gamma: kernel.gamma(),
        patch,
        trials,
        ordering_holds: samples.iter().all(|(s, e)| s >= e),
        levels,
        point_levels,
        lambda2_slope: c2,
        c1,
        envelope_holds: c2 > 0.0 && c1.is_finite(),
        fit_points,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaScaling {
    pub base: SupTailReport,
    pub scaled: SupTailReport,
    pub factor: f64,
    pub ratio: f64,
    /// `factor^{-(2 - gamma)/2}`.
    pub expected: f64,
    /// `|ratio / expected - 1| <= 0.2`.
    pub within_tolerance: bool,
}

/// Runs [`sup_tail_check`] at `beta` and `factor * beta` and compares the
/// fitted `lambda^2` slopes.
pub fn beta_scaling(
    kernel: &Arc<RieszKernel>,
    patch: PatchSpec,
    factor: f64,
    trials: usize,
    rng: RngSpec,
) -> Result<BetaScaling> {
    let base = sup_tail_check(kernel, patch, &[], trials, rng.derive(0))?;
    let scaled_patch = PatchSpec {
        beta: patch.beta * factor,
        ..patch
    };
    let scaled = sup_tail_check(kernel, scaled_patch, &[], trials, rng.derive(1))?;
    let ratio = scaled.lambda2_slope / base.lambda2_slope;
    let expected = factor.powf(-(2.0 - kernel.gamma()) / 2.0);
    Ok(BetaScaling {
        within_tolerance: (ratio / expected - 1.0).abs() <= 0.2,
        base,
        scaled,
        factor,
        ratio,
        expected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel() -> Arc<RieszKernel> {
        Arc::new(RieszKernel::new(0.5, 256).unwrap())
    }

    #[test]
    fn zero_threshold_is_always_exceeded() {
        let p = SpaceTimePoint { t: 0.1, x: 0.0 };
        let q = SpaceTimePoint { t: 0.1, x: 0.1 };
        let r = increment_tail_check(&kernel(), p, q, &[0.0, 0.5, 1.0, 2.0], 4000, RngSpec::new(1, 0)).unwrap();
        assert_eq!(r.levels[0].frequency, 1.0);
    }

    #[test]
    fn gaussian_increment_tail_at_two_sd() {
        let p = SpaceTimePoint { t: 0.1, x: 0.0 };
        let q = SpaceTimePoint { t: 0.1, x: 0.1 };
        let r = increment_tail_check(&kernel(), p, q, &[1.0, 2.0], 20_000, RngSpec::new(2, 0)).unwrap();
        let f = r.levels[1].frequency;
        let se = (0.0455 * 0.9545 / 20_000.0f64).sqrt();
        assert!((f - stats::normal_two_sided_tail(2.0)).abs() < 4.0 * se, "{f}");
        assert!((r.msq_empirical / r.msq - 1.0).abs() < 0.05);
    }

    #[test]
    fn increment_variance_matches_spectral_oracles() {
        let k = kernel();
        let p = SpaceTimePoint { t: 0.05, x: 0.2 };
        let same_time = SpaceTimePoint { t: 0.05, x: 0.35 };
        let same_place = SpaceTimePoint { t: 0.07, x: 0.2 };
        let s = super::super::regularity::space_msq(&k, 0.05, 0.15);
        let t = super::super::regularity::time_msq(&k, 0.05, 0.02);
        assert!((increment_msq(&k, p, same_time) - s).abs() < 1e-14);
        assert!((increment_msq(&k, p, same_place) - t).abs() < 1e-14);
    }

    #[test]
    fn patch_sup_dominates_point_value() {
        let r = sup_tail_check(&kernel(), PatchSpec::new(1.0, 0.3), &[], 2000, RngSpec::new(3, 0)).unwrap();
        assert!(r.ordering_holds);
        for (a, b) in r.levels.iter().zip(&r.point_levels) {
            assert!(a.exceedances >= b.exceedances);
        }
        assert!(r.lambda2_slope > 0.0);
    }

    #[test]
    fn huge_threshold_is_never_exceeded() {
        let r = sup_tail_check(&kernel(), PatchSpec::new(1.0, 0.3), &[0.01, 0.02, 1e6], 500, RngSpec::new(5, 0)).unwrap();
        assert_eq!(r.levels[2].exceedances, 0);
        assert!(r.levels[2].upper_bound.is_some());
    }

    #[test]
    fn patch_must_fit_in_unit_time() {
        assert!(sup_tail_check(&kernel(), PatchSpec::new(100.0, 1.0), &[], 10, RngSpec::new(1, 0)).is_err());
    }
}
