//! Heat kernel on the torus [-1, 1) and the Riesz spatial covariance.
//!
//! The heat kernel has unit mass on the torus and two exact series
//! representations: a sum of Gaussian images, which converges fast for small
//! times, and a cosine series, which converges fast for large times.
//!
//! The Riesz covariance `|r|^{-gamma}` is expanded as the even cosine series
//! `q_0 + sum_{n>=1} q_n cos(n pi r)`; the coefficients are the amplitudes the
//! noise sampler needs.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// Below this time the image sum is used by [`HeatKernelForm::Auto`].
pub const T_CROSS: f64 = 0.3;
/// Minimum number of images on each side of the origin.
pub const MIN_IMAGES: i64 = 7;
/// The cosine series stops once `exp(-pi^2 n^2 t)` drops below this.
pub const SPECTRAL_CUTOFF: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeatKernelForm {
    ImageSum,
    Spectral,
    Auto,
}

#[derive(Debug, Clone, Copy)]
pub struct HeatKernelQuery {
    pub t: f64,
    pub x: f64,
    pub form: HeatKernelForm,
}

impl HeatKernelQuery {
    pub fn new(t: f64, x: f64) -> Self {
        HeatKernelQuery {
            t,
            x,
            form: HeatKernelForm::Auto,
        }
    }

    pub fn with_form(mut self, form: HeatKernelForm) -> Self {
        self.form = form;
        self
    }
}

/// Representative of `x` modulo 2 in [-1, 1).
#[inline]
pub fn reduce_torus(x: f64) -> f64 {
    // Keep full relative precision for arguments already in range.
    if (-1.0..1.0).contains(&x) {
        return x;
    }
    let y = (x + 1.0).rem_euclid(2.0) - 1.0;
    // rem_euclid can round up to exactly 2.0 for tiny negative inputs.
    if y >= 1.0 {
        y - 2.0
    } else {
        y
    }
}

/// Distance on the torus of circumference 2.
#[inline]
pub fn torus_distance(x: f64, y: f64) -> f64 {
    reduce_torus(x - y).abs()
}

pub fn heat_kernel(q: HeatKernelQuery) -> Result<f64> {
    if !q.t.is_finite() || !q.x.is_finite() {
        return Err(Error::domain(format!(
            "heat kernel needs finite arguments, got t={}, x={}",
            q.t, q.x
        )));
    }
    if q.t <= 0.0 {
        return Err(Error::domain(format!("heat kernel needs t > 0, got {}", q.t)));
    }
    let form = match q.form {
        HeatKernelForm::Auto if q.t < T_CROSS => HeatKernelForm::ImageSum,
        HeatKernelForm::Auto => HeatKernelForm::Spectral,
        f => f,
    };
    Ok(match form {
        HeatKernelForm::ImageSum => heat_kernel_images(q.t, q.x),
        _ => heat_kernel_spectral(q.t, q.x),
    })
}

/// Number of images per side so that the first omitted one is below 1e-17 relative.
fn image_count(t: f64) -> i64 {
    // Omitted images sit at distance >= 2M + 1; require (2M+1)^2 / 4t >= 40.
    let needed = (((160.0 * t).sqrt() - 1.0) / 2.0).ceil() as i64;
    needed.max(MIN_IMAGES)
}

/// `sum_n (4 pi t)^{-1/2} exp(-(x + 2n)^2 / 4t)`; `t > 0` is assumed.
pub fn heat_kernel_images(t: f64, x: f64) -> f64 {
    let x = reduce_torus(x);
    let m = image_count(t);
    let inv4t = 0.25 / t;
    let mut acc = 0.0;
    // Smallest terms first.
    for k in (1..=m).rev() {
        let k2 = 2.0 * k as f64;
        acc += (-(x + k2) * (x + k2) * inv4t).exp() + (-(x - k2) * (x - k2) * inv4t).exp();
    }
    acc += (-x * x * inv4t).exp();
    acc / (4.0 * PI * t).sqrt()
}

/// `1/2 + sum_{n>=1} exp(-pi^2 n^2 t) cos(n pi x)`; `t > 0` is assumed.
pub fn heat_kernel_spectral(t: f64, x: f64) -> f64 {
    let x = reduce_torus(x);
    let decay = PI * PI * t;
    let n_max = ((-SPECTRAL_CUTOFF.ln()) / decay).sqrt().ceil() as usize;
    let mut acc = 0.0;
    for n in (1..=n_max.max(1)).rev() {
        let nf = n as f64;
        acc += (-decay * nf * nf).exp() * (PI * nf * x).cos();
    }
    0.5 + acc
}

/// Riesz covariance `|r|^{-gamma}` with `r` taken on the torus.
pub fn riesz_covariance(r: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if !r.is_finite() {
        return Err(Error::domain(format!("non-finite separation {r}")));
    }
    let d = reduce_torus(r).abs();
    if d == 0.0 {
        return Err(Error::Singularity { r });
    }
    Ok(d.powf(-gamma))
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("gamma must lie in (0, 1), got {gamma}")))
    }
}

/// `sum_{n > n0} n^{-s}` for `s > 1` by Euler–Maclaurin.
pub fn power_tail(s: f64, n0: usize) -> f64 {
    debug_assert!(s > 1.0);
    if n0 == 0 {
        return f64::INFINITY;
    }
    // Sum a short block exactly so the expansion point is large.
    let start = n0.max(32);
    let mut acc = 0.0;
    for n in (n0 + 1)..=start {
        acc += (n as f64).powf(-s);
    }
    let m = start as f64;
    let f = m.powf(-s);
    acc + m * f / (s - 1.0) - 0.5 * f + s * f / (12.0 * m)
        - s * (s + 1.0) * (s + 2.0) * f / (720.0 * m * m * m)
}

/// Cosine-series coefficients of the Riesz covariance on the torus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RieszKernel {
    gamma: f64,
    q: Vec<f64>,
    /// `lim n^{1-gamma} q_n`.
    amplitude: f64,
}

/// Fitted envelope `c n^{gamma-1} <= q_n <= c' n^{gamma-1}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Envelope {
    pub n_min: usize,
    pub n_max: usize,
    pub lower: f64,
    pub upper: f64,
}

const COEFF_REL_TOL: f64 = 1e-10;

impl RieszKernel {
    /// Coefficients `q_0..=q_modes`.
    ///
    /// `q_0 = 1/(1-gamma)`, `q_n = 2 int_0^1 x^{-gamma} cos(n pi x) dx`. With
    /// `x = v/n` the integral becomes `n^{gamma-1} int_0^n v^{-gamma} cos(pi v) dv`,
    /// which splits at `v = 1/pi` (the point `x = 1/(n pi)`): below it the cosine
    /// is expanded in its Taylor series, above it each unit cell `[k, k+1]`
    /// contributes `(-1)^k c_k` with `c_k = int_0^1 (k+u)^{-gamma} cos(pi u) du`
    /// independent of `n`. The coefficients are therefore prefix sums of one
    /// alternating sequence.
    pub fn new(gamma: f64, modes: usize) -> Result<Self> {
        check_gamma(gamma)?;
        if modes < 1 {
            return Err(Error::domain("mode count must be at least 1"));
        }
        let head = unit_cell_head(gamma)?;
        let cells = unit_cells(gamma, modes)?;
        let mut q = Vec::with_capacity(modes + 1);
        q.push(1.0 / (1.0 - gamma));
        let mut partial = head;
        for n in 1..=modes {
            if n >= 2 {
                let k = n - 1;
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                partial += sign * cells[k - 1];
            }
            let value = 2.0 * (n as f64).powf(gamma - 1.0) * partial;
            if value < -1e-12 {
                return Err(Error::numeric(format!(
                    "coefficient q_{n} = {value:e} is negative beyond round-off"
                )));
            }
            q.push(value.max(0.0));
        }
        // sum_{n>=1} q_n / n^2 < infinity holds for every gamma in (0, 1).
        debug_assert!(gamma - 3.0 < -1.0);
        let amplitude = 2.0 * statrs::function::gamma::gamma(1.0 - gamma)
            * (0.5 * PI * gamma).sin()
            * PI.powf(gamma - 1.0);
        Ok(RieszKernel {
            gamma,
            q,
            amplitude,
        })
    }

    /// Kernel with every coefficient zero; for degenerate-noise checks.
    pub fn zero(gamma: f64, modes: usize) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(RieszKernel {
            gamma,
            q: vec![0.0; modes + 1],
            amplitude: 0.0,
        })
    }

    /// Kernel with explicitly supplied coefficients (test fixtures, truncations).
    pub fn from_coefficients(gamma: f64, q: Vec<f64>) -> Result<Self> {
        check_gamma(gamma)?;
        if q.is_empty() || q.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::domain("coefficients must be finite and non-negative"));
        }
        Ok(RieszKernel {
            gamma,
            q,
            amplitude: 0.0,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mode_count(&self) -> usize {
        self.q.len() - 1
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// Limit of `n^{1-gamma} q_n`; zero for hand-built coefficient tables.
    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// `q_n` for `n <= N`, the large-`n` asymptote beyond.
    pub fn coefficient(&self, n: usize) -> f64 {
        match self.q.get(n) {
            Some(v) => *v,
            None => self.amplitude * (n as f64).powf(self.gamma - 1.0),
        }
    }

    /// Truncated cosine series `sum_{n<=N} q_n cos(n pi r)`.
    pub fn truncated_covariance(&self, r: f64) -> f64 {
        self.q
            .iter()
            .enumerate()
            .map(|(n, q)| q * (PI * n as f64 * r).cos())
            .sum()
    }

    /// Fejér (Cesàro) mean of the partial sums of the cosine series.
    pub fn cesaro_covariance(&self, r: f64) -> f64 {
        let big_n = self.mode_count() as f64 + 1.0;
        self.q
            .iter()
            .enumerate()
            .map(|(n, q)| q * (1.0 - n as f64 / big_n) * (PI * n as f64 * r).cos())
            .sum()
    }

    /// Tightest `c <= q_n n^{1-gamma} <= c'` over `n_min <= n <= N`.
    pub fn envelope(&self, n_min: usize) -> Result<Envelope> {
        let n_max = self.mode_count();
        if n_min < 1 || n_min > n_max {
            return Err(Error::domain(format!(
                "envelope range [{n_min}, {n_max}] is empty"
            )));
        }
        let (mut lower, mut upper) = (f64::INFINITY, 0.0f64);
        for n in n_min..=n_max {
            let scaled = self.q[n] * (n as f64).powf(1.0 - self.gamma);
            lower = lower.min(scaled);
            upper = upper.max(scaled);
        }
        Ok(Envelope {
            n_min,
            n_max,
            lower,
            upper,
        })
    }

    /// Least-squares slope of `log q_n` against `log n` over `[n_lo, n_hi]`.
    pub fn loglog_slope(&self, n_lo: usize, n_hi: usize) -> Result<f64> {
        let n_hi = n_hi.min(self.mode_count());
        if n_lo < 1 || n_hi <= n_lo {
            return Err(Error::domain("slope needs at least two modes"));
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = (n_lo..=n_hi)
            .filter(|&n| self.q[n] > 0.0)
            .map(|n| ((n as f64).ln(), self.q[n].ln()))
            .unzip();
        crate::stats::ols(&xs, &ys).map(|f| f.slope)
    }

    /// CSV table with columns `n,q_n`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,q_n")?;
        for (n, q) in self.q.iter().enumerate() {
            writeln!(w, "{n},{q:.17e}")?;
        }
        Ok(())
    }
}

/// `int_0^1 u^{-gamma} cos(pi u) du`, split at `u = 1/pi`.
fn unit_cell_head(gamma: f64) -> Result<f64> {
    let a = 1.0 / PI;
    // Taylor part: with pi*a = 1 every term is a^{1-gamma} (-1)^k / ((2k)! (2k+1-gamma)).
    let mut series = 0.0;
    let mut fact = 1.0;
    for k in 0..24 {
        if k > 0 {
            fact *= (2 * k - 1) as f64 * (2 * k) as f64;
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        series += sign / (fact * (2 * k) as f64 + fact - fact * gamma);
    }
    let near = a.powf(1.0 - gamma) * series;
    let f = |u: f64| (-gamma * u.ln()).exp() * (PI * u).cos();
    let coarse = quad::rule(24).integrate(a, 1.0, f);
    let fine = quad::rule(36).integrate(a, 1.0, f);
    if (fine - coarse).abs() > COEFF_REL_TOL * fine.abs().max(1e-3) {
        return Err(Error::numeric(format!(
            "head cell quadrature unresolved: {coarse:e} vs {fine:e}"
        )));
    }
    Ok(near + fine)
}

/// `c_k = int_0^1 (k+u)^{-gamma} cos(pi u) du` for `k = 1..modes-1`.
fn unit_cells(gamma: f64, modes: usize) -> Result<Vec<f64>> {
    let count = modes.saturating_sub(1);
    let gl = quad::rule(20);
    // Precompute the cosine factor at the mapped nodes.
    let nodes: Vec<(f64, f64)> = gl
        .mapped(0.0, 1.0)
        .map(|(u, w)| (u, w * (PI * u).cos()))
        .collect();
    let cell = |k: f64| -> f64 {
        nodes
            .iter()
            .map(|(u, wc)| wc * (-gamma * (k + u).ln()).exp())
            .sum()
    };
    // The first cell is the least smooth; check it against a finer rule.
    if count >= 1 {
        let fine = quad::rule(32).integrate(0.0, 1.0, |u| {
            (-gamma * (1.0 + u).ln()).exp() * (PI * u).cos()
        });
        let coarse = cell(1.0);
        if (fine - coarse).abs() > COEFF_REL_TOL * 1e-2 {
            return Err(Error::numeric(format!(
                "unit cell quadrature unresolved: {coarse:e} vs {fine:e}"
            )));
        }
    }
    Ok((1..=count).map(|k| cell(k as f64)).collect())
}

/// Largest `|G_images - G_spectral|` on a `points x points` grid with `t`
/// log-spaced in `[1e-4, 4]` and `x` uniform in `[-1, 1]`.
pub fn dual_series_max_diff(points: usize) -> f64 {
    let points = points.max(2);
    let (lo, hi) = (1e-4f64.ln(), 4f64.ln());
    let mut worst = 0.0f64;
    for i in 0..points {
        let t = (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp();
        for j in 0..points {
            let x = -1.0 + 2.0 * j as f64 / (points - 1) as f64;
            worst = worst.max((heat_kernel_images(t, x) - heat_kernel_spectral(t, x)).abs());
        }
    }
    worst
}

fn integration_tol() -> quad::Tolerance {
    quad::Tolerance::new(1e-14, 1e-12)
}

/// `|int_{-1}^{1} G(t, x) dx - 1|`.
pub fn mass_error(t: f64) -> Result<f64> {
    let g = |x: f64| heat_kernel(HeatKernelQuery::new(t, x)).unwrap_or(f64::NAN);
    let w = (40.0 * t).sqrt().min(1.0);
    let pts = [-1.0, -w, 0.0, w, 1.0];
    Ok((quad::adaptive_split(g, &pts, integration_tol())? - 1.0).abs())
}

/// `|int G(s, x - y) G(t, y) dy - G(s + t, x)|`.
pub fn semigroup_error(s: f64, t: f64, x: f64) -> Result<f64> {
    let x = reduce_torus(x);
    let g = |t: f64, x: f64| heat_kernel(HeatKernelQuery::new(t, x)).unwrap_or(f64::NAN);
    let mut pts = vec![-1.0, 1.0, 0.0, x];
    for c in [0.0, x] {
        for w in [(40.0 * s).sqrt(), (40.0 * t).sqrt()] {
            pts.extend([c - w, c + w]);
        }
    }
    let mut pts: Vec<f64> = pts.into_iter().map(|p| p.clamp(-1.0, 1.0)).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let conv = quad::adaptive_split(|y| g(s, x - y) * g(t, y), &pts, integration_tol())?;
    Ok((conv - g(s + t, x)).abs())
}

/// Heat-kernel identities and coefficient properties for one `gamma`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelCheck {
    pub gamma: f64,
    pub modes: usize,
    /// Over the 50 x 50 grid.
    pub dual_series_max_diff: f64,
    pub mass_max_error: f64,
    pub semigroup_max_error: f64,
    pub coefficients_nonnegative: bool,
    /// Slope of `log q_n` on `log n` over `[16, modes]`.
    pub slope: f64,
    pub envelope: Envelope,
    /// `q_n / (2 Gamma(1-gamma) sin(pi gamma/2) (n pi)^{gamma-1})` at the
    /// largest `n <= 1024`.
    pub asymptotic_ratio: f64,
    /// `|Cesaro mean at r = 0.5 - 0.5^{-gamma}|`.
    pub cesaro_error: f64,
}

impl KernelCheck {
    pub fn dual_series_ok(&self) -> bool {
        self.dual_series_max_diff < 1e-10
    }

    pub fn mass_ok(&self) -> bool {
        self.mass_max_error < 1e-10
    }

    pub fn semigroup_ok(&self) -> bool {
        self.semigroup_max_error < 1e-8
    }

    pub fn slope_ok(&self) -> bool {
        (self.slope - (self.gamma - 1.0)).abs() <= 0.02
    }

    /// Named pass/fail results in a fixed order.
    pub fn verdicts(&self) -> Vec<(&'static str, bool)> {
        vec![
            ("dual-series agreement", self.dual_series_ok()),
            ("unit mass", self.mass_ok()),
            ("semigroup", self.semigroup_ok()),
            ("coefficients non-negative", self.coefficients_nonnegative),
            ("coefficient slope", self.slope_ok()),
        ]
    }
}

pub fn kernel_check(gamma: f64, modes: usize) -> Result<KernelCheck> {
    let kernel = RieszKernel::new(gamma, modes)?;
    if modes < 32 {
        return Err(Error::domain("kernel check needs at least 32 modes"));
    }
    let mut mass_max_error = 0.0f64;
    for t in [1e-4, 1e-3, 0.01, 0.1, 0.3, 1.0, 4.0] {
        mass_max_error = mass_max_error.max(mass_error(t)?);
    }
    let mut semigroup_max_error = 0.0f64;
    for (s, t) in [(1e-3, 1e-3), (1e-3, 0.05), (0.02, 0.2), (0.1, 0.5), (0.5, 1.0)] {
        for x in [0.0, 0.3, -0.7, 1.0] {
            semigroup_max_error = semigroup_max_error.max(semigroup_error(s, t, x)?);
        }
    }
    let n = modes.min(1024);
    let asymptote = kernel.amplitude() * (n as f64).powf(gamma - 1.0);
    Ok(KernelCheck {
        gamma,
        modes,
        dual_series_max_diff: dual_series_max_diff(50),
        mass_max_error,
        semigroup_max_error,
        coefficients_nonnegative: kernel.q().iter().all(|q| *q >= 0.0),
        slope: kernel.loglog_slope(16, modes)?,
        envelope: kernel.envelope(16)?,
        asymptotic_ratio: kernel.q()[n] / asymptote,
        cesaro_error: (kernel.cesaro_covariance(0.5) - 0.5f64.powf(-gamma)).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torus_reduction() {
        assert_eq!(reduce_torus(0.5), 0.5);
        assert!((reduce_torus(1.5) + 0.5).abs() < 1e-15);
        assert!((reduce_torus(-1.25) - 0.75).abs() < 1e-15);
        assert_eq!(reduce_torus(1.0), -1.0);
        assert!((torus_distance(0.9, -0.9) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn heat_kernel_rejects_bad_time() {
        assert!(heat_kernel(HeatKernelQuery::new(0.0, 0.1)).is_err());
        assert!(heat_kernel(HeatKernelQuery::new(-1.0, 0.1)).is_err());
        assert!(heat_kernel(HeatKernelQuery::new(f64::NAN, 0.1)).is_err());
        assert!(heat_kernel(HeatKernelQuery::new(0.1, f64::INFINITY)).is_err());
    }

    #[test]
    fn equilibrium_is_one_half() {
        for x in [-1.0, -0.3, 0.0, 0.7] {
            let g = heat_kernel(HeatKernelQuery::new(50.0, x)).unwrap();
            assert!((g - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn riesz_values() {
        assert_eq!(riesz_covariance(1.0, 0.5).unwrap(), 1.0);
        assert!((riesz_covariance(0.25, 0.5).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(
            riesz_covariance(0.0, 0.5),
            Err(Error::Singularity { .. })
        ));
        assert!(riesz_covariance(0.5, 1.0).is_err());
        assert!(riesz_covariance(0.5, 0.0).is_err());
    }

    #[test]
    fn zeroth_coefficient_closed_form() {
        let k = RieszKernel::new(0.5, 8).unwrap();
        assert_eq!(k.q()[0], 2.0);
        assert!(k.q().iter().all(|q| *q >= 0.0));
    }

    #[test]
    fn power_tail_matches_direct_sum() {
        let direct: f64 = (11..2_000_000).map(|n| (n as f64).powf(-2.5)).sum::<f64>()
            + power_tail(2.5, 1_999_999);
        assert!((power_tail(2.5, 10) - direct).abs() < 1e-12);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let k = RieszKernel::new(0.25, 3).unwrap();
        let mut buf = Vec::new();
        k.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "n,q_n");
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn self_check_passes_for_reference_gammas() {
        for gamma in [0.25, 0.5, 0.75] {
            let c = kernel_check(gamma, 4096).unwrap();
            for (name, ok) in c.verdicts() {
                assert!(ok, "{name} failed for gamma {gamma}: {c:?}");
            }
            assert!((c.asymptotic_ratio - 1.0).abs() < 0.01);
            assert!(c.cesaro_error <= 0.01);
        }
    }

    #[test]
    fn semigroup_holds_across_the_seam() {
        assert!(semigroup_error(0.01, 0.02, 0.99).unwrap() < 1e-10);
        assert!(semigroup_error(0.01, 0.02, -1.0).unwrap() < 1e-10);
    }

}
