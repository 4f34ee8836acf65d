//! Small statistics toolkit: line fits, running moments, binomial intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn ols(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    let w = vec![1.0; xs.len()];
    let mut fit = weighted_fit(xs, ys, &w)?;
    // Classical OLS standard error from the residual variance.
    fit.slope_stderr = residual_slope_stderr(xs, ys, &w, &fit);
    Ok(fit)
}

/// Weighted least squares with weights `ws` (inverse variances).
///
/// The slope standard error is the model-based `(X'WX)^{-1}` value inflated by
/// the reduced chi-square when the scatter exceeds the stated variances.
pub fn wls(xs: &[f64], ys: &[f64], ws: &[f64]) -> Result<LineFit> {
    let mut fit = weighted_fit(xs, ys, ws)?;
    let sw: f64 = ws.iter().sum();
    let xbar = xs.iter().zip(ws).map(|(x, w)| w * x).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(ws).map(|(x, w)| w * (x - xbar).powi(2)).sum();
    let model = (1.0 / sxx).sqrt();
    let dof = xs.len().saturating_sub(2);
    let chi2: f64 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| w * (y - fit.intercept - fit.slope * x).powi(2))
        .sum();
    let inflate = if dof > 0 { (chi2 / dof as f64).max(1.0) } else { 1.0 };
    fit.slope_stderr = model * inflate.sqrt();
    Ok(fit)
}

fn weighted_fit(xs: &[f64], ys: &[f64], ws: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() || xs.len() != ws.len() {
        return Err(Error::Fit("mismatched fit input lengths".into()));
    }
    if xs.len() < 2 {
        return Err(Error::Fit(format!("need at least 2 points, got {}", xs.len())));
    }
    if xs.iter().chain(ys).chain(ws).any(|v| !v.is_finite()) || ws.iter().any(|w| *w <= 0.0) {
        return Err(Error::Fit("non-finite data or non-positive weight".into()));
    }
    let sw: f64 = ws.iter().sum();
    let xbar = xs.iter().zip(ws).map(|(x, w)| w * x).sum::<f64>() / sw;
    let ybar = ys.iter().zip(ws).map(|(y, w)| w * y).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
        sxx += w * (x - xbar).powi(2);
        sxy += w * (x - xbar) * (y - ybar);
        syy += w * (y - ybar).powi(2);
    }
    if sxx <= 0.0 {
        return Err(Error::Fit("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let r_squared = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    Ok(LineFit {
        slope,
        intercept,
        slope_stderr: f64::NAN,
        r_squared,
        points: xs.len(),
    })
}

fn residual_slope_stderr(xs: &[f64], ys: &[f64], ws: &[f64], fit: &LineFit) -> f64 {
    let dof = xs.len() as f64 - 2.0;
    if dof <= 0.0 {
        return 0.0;
    }
    let sw: f64 = ws.iter().sum();
    let xbar = xs.iter().zip(ws).map(|(x, w)| w * x).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(ws).map(|(x, w)| w * (x - xbar).powi(2)).sum();
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| w * (y - fit.intercept - fit.slope * x).powi(2))
        .sum();
    (rss / dof / sxx).sqrt()
}

/// Welford accumulator.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.count < 2 {
            f64::INFINITY
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// Exact (Clopper–Pearson) two-sided interval for a binomial proportion.
pub fn clopper_pearson(hits: u64, trials: u64, level: f64) -> (f64, f64) {
    assert!(trials > 0 && hits <= trials);
    let alpha = 1.0 - level;
    let (k, n) = (hits as f64, trials as f64);
    let lo = if hits == 0 {
        0.0
    } else {
        Beta::new(k, n - k + 1.0)
            .expect("valid beta")
            .inverse_cdf(alpha / 2.0)
    };
    let hi = if hits == trials {
        1.0
    } else {
        Beta::new(k + 1.0, n - k)
            .expect("valid beta")
            .inverse_cdf(1.0 - alpha / 2.0)
    };
    (lo, hi)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Two-sided standard normal tail `P(|Z| > z)`.
pub fn normal_two_sided_tail(z: f64) -> f64 {
    statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_recovers_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let f = ols(&xs, &ys).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14);
        assert!((f.intercept - 2.0).abs() < 1e-14);
        assert!(f.slope_stderr < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_degenerate_input() {
        assert!(ols(&[1.0], &[1.0]).is_err());
        assert!(ols(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(wls(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn moments_merge_matches_single_pass() {
        let data: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let all: Moments = data.iter().copied().collect();
        let mut a: Moments = data[..40].iter().copied().collect();
        let b: Moments = data[40..].iter().copied().collect();
        a.merge(&b);
        assert!((a.mean - all.mean).abs() < 1e-14);
        assert!((a.variance() - all.variance()).abs() < 1e-14);
    }

    #[test]
    fn clopper_pearson_reference_values() {
        // n = 10, k = 3: standard tables give (0.0667, 0.6525).
        let (lo, hi) = clopper_pearson(3, 10, 0.95);
        assert!((lo - 0.066_739).abs() < 1e-5, "{lo}");
        assert!((hi - 0.652_453).abs() < 1e-5, "{hi}");
        assert_eq!(clopper_pearson(0, 10, 0.95).0, 0.0);
        assert_eq!(clopper_pearson(10, 10, 0.95).1, 1.0);
    }

    #[test]
    fn two_sided_tail_at_two() {
        assert!((normal_two_sided_tail(2.0) - 0.0455).abs() < 1e-4);
    }
}
