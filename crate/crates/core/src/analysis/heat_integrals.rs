//! Heat-kernel double integrals that control the Hölder envelope of `N`:
//!
//! space: `int_0^t int |G_{t-r}(x-z) - G_{t-r}(y-z)| (t-r)^{a-1} dz dr`,
//! time:  `int_0^s int |G_{t-r}(x-z)(t-r)^{a-1} - G_{s-r}(x-z)(s-r)^{a-1}| dz dr`.
//!
//! Both are translation invariant, so they depend only on `|x - y|` (with `t`)
//! or on `t - s` (with `s`). The outer variable is mapped by `w = u^a`, which
//! absorbs the `u^{a-1}` singularity.

use serde::{Deserialize, Serialize};

use super::regularity::Direction;
use crate::error::{Error, Result};
use crate::kernel::{heat_kernel_images, torus_distance};
use crate::quad::{adaptive_split, Tolerance};
use crate::stats;

/// Half-width of the window around a Gaussian peak, in units of `sqrt(tau)`.
const WINDOW: f64 = 12.0;

fn inner_tol() -> Tolerance {
    Tolerance::new(1e-13, 1e-10)
}

fn outer_tol() -> Tolerance {
    Tolerance::new(1e-11, 1e-8)
}

/// Sorted, deduplicated breakpoints clamped to one period `[-1, 1]`.
fn breakpoints(mut pts: Vec<f64>) -> Vec<f64> {
    pts.push(-1.0);
    pts.push(1.0);
    let mut pts: Vec<f64> = pts.into_iter().map(|p| p.clamp(-1.0, 1.0)).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// `int_{-1}^{1} |G_tau(x - z) - G_tau(y - z)| dz` for `|x - y| = h`.
///
/// The integrand in `u = x - z` is symmetric about `u = h/2`, so only the
/// half period `[h/2 - 1, h/2]` is integrated; it holds the peak at `u = 0`,
/// which keeps the argument of the narrow Gaussian free of cancellation.
pub fn space_inner(tau: f64, h: f64) -> Result<f64> {
    let h = torus_distance(h, 0.0);
    if h == 0.0 {
        return Ok(0.0);
    }
    let half = 0.5 * h;
    let l = WINDOW * tau.sqrt();
    let mut pts: Vec<f64> = vec![half - 1.0, -l, 0.0, l, half - l, half]
        .into_iter()
        .map(|p| p.clamp(half - 1.0, half))
        .collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let v = adaptive_split(
        |u| (heat_kernel_images(tau, u) - heat_kernel_images(tau, u - h)).abs(),
        &pts,
        inner_tol(),
    )?;
    Ok(2.0 * v)
}

/// `int_{-1}^{1} |(u+d)^{a-1} G_{u+d}(z) - u^{a-1} G_u(z)| dz`.
pub fn time_inner(alpha: f64, u: f64, d: f64) -> Result<f64> {
    if d == 0.0 {
        return Ok(0.0);
    }
    let wide = (u + d).powf(alpha - 1.0);
    let narrow = u.powf(alpha - 1.0);
    let diff = |z: f64| wide * heat_kernel_images(u + d, z) - narrow * heat_kernel_images(u, z);
    let l0 = WINDOW * u.sqrt();
    let l1 = WINDOW * (u + d).sqrt();
    let mut pts = vec![0.0, -l0, l0, -l1, l1];
    // The narrow term dominates at 0; the kink of |diff| is where the wider
    // one takes over, located exactly so no panel straddles it.
    if diff(0.0) < 0.0 && diff(1.0) > 0.0 {
        let z = crossing(&diff, 0.0, 1.0);
        pts.extend([-z, z]);
    }
    // The integrand is even in z.
    let half: Vec<f64> = breakpoints(pts).into_iter().filter(|&p| p >= 0.0).collect();
    Ok(2.0 * adaptive_split(|z| diff(z).abs(), &half, inner_tol())?)
}

/// Bisection for a sign change of `f` on `[lo, hi]` with `f(lo) < 0 < f(hi)`.
fn crossing<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    while hi - lo > f64::EPSILON * hi.max(1e-300) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Outer integral over `w in [0, top^alpha]` split at `w = knee^alpha`,
/// where `g(u)` is the inner integral times whatever power the map leaves.
fn outer<F: Fn(f64) -> Result<f64>>(alpha: f64, top: f64, knee: f64, g: F) -> Result<f64> {
    let w_top = top.powf(alpha);
    let mut pts = vec![0.0, w_top];
    let w_knee = knee.powf(alpha);
    if w_knee > 0.0 && w_knee < w_top {
        pts.insert(1, w_knee);
    }
    let failure = std::cell::RefCell::new(None);
    let v = adaptive_split(
        |w| {
            let u = w.powf(1.0 / alpha);
            if u <= 0.0 {
                return 0.0;
            }
            match g(u) {
                Ok(v) => v / alpha,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &pts,
        outer_tol(),
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    v
}

/// Space integral at separation `h` and time `t`.
pub fn space_integral(alpha: f64, t: f64, h: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::domain(format!("need 0 < t <= 1, got {t}")));
    }
    let h = torus_distance(h, 0.0);
    if h == 0.0 {
        return Ok(0.0);
    }
    // tau^{a-1} d tau = dw / a, so the mapped integrand is the inner integral.
    outer(alpha, t, h * h, |tau| space_inner(tau, h))
}

/// Time integral for `s` and `t = s + d`.
pub fn time_integral(alpha: f64, s: f64, d: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(s > 0.0) || !(d >= 0.0) || s + d > 1.0 {
        return Err(Error::domain(format!("need 0 < s <= t <= 1, got s = {s}, t = {}", s + d)));
    }
    if d == 0.0 {
        return Ok(0.0);
    }
    // u^{a-1} du = dw / a leaves a factor u^{1-a} on the inner integral.
    outer(alpha, s, d, |u| Ok(u.powf(1.0 - alpha) * time_inner(alpha, u, d)?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HolderQuadratureReport {
    pub alpha: f64,
    pub direction: Direction,
    /// Target Hölder exponent (`xi` in space, `zeta` in time).
    pub exponent: f64,
    /// `t` in space, `s` in time.
    pub base: f64,
    pub separations: Vec<f64>,
    pub values: Vec<f64>,
    pub slope: f64,
    /// Largest `value / separation^exponent`, an empirical constant.
    pub constant: f64,
    /// Fitted slope is at least the target exponent.
    pub holds: bool,
}

/// Evaluates one of the integrals at each separation and fits the log-log slope.
pub fn holder_quadrature(
    alpha: f64,
    exponent: f64,
    direction: Direction,
    base: f64,
    separations: &[f64],
) -> Result<HolderQuadratureReport> {
    check_alpha(alpha)?;
    let limit = match direction {
        Direction::Space => 2.0 * alpha,
        Direction::Time => alpha,
    };
    if !(exponent > 0.0 && exponent < limit) {
        return Err(Error::domain(format!(
            "exponent must lie in (0, {limit}), got {exponent}"
        )));
    }
    if separations.len() < 2 || separations.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Config("need >= 2 positive separations".into()));
    }
    let values = separations
        .iter()
        .map(|&h| match direction {
            Direction::Space => space_integral(alpha, base, h),
            Direction::Time => time_integral(alpha, base, h),
        })
        .collect::<Result<Vec<f64>>>()?;
    let xs: Vec<f64> = separations.iter().map(|s| s.ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let slope = stats::ols(&xs, &ys)?.slope;
    let constant = separations
        .iter()
        .zip(&values)
        .map(|(s, v)| v / s.powf(exponent))
        .fold(0.0, f64::max);
    Ok(HolderQuadratureReport {
        alpha,
        direction,
        exponent,
        base,
        separations: separations.to_vec(),
        values,
        slope,
        constant,
        holds: slope >= exponent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    /// Mass of the wrapped Gaussian `G_tau` on `[a, b]` by images.
    fn mass(tau: f64, a: f64, b: f64) -> f64 {
        let nd = Normal::new(0.0, (2.0 * tau).sqrt()).unwrap();
        (-20..=20)
            .map(|n| {
                let s = 2.0 * n as f64;
                nd.cdf(b + s) - nd.cdf(a + s)
            })
            .sum()
    }

    #[test]
    fn space_inner_matches_closed_form() {
        // G(u) - G(u - h) is positive exactly on (h/2 - 1, h/2).
        for &(tau, h) in &[(1e-4, 0.05), (0.01, 0.3), (0.3, 0.9), (1e-8, 0.001)] {
            let exact = 2.0 * (mass(tau, h / 2.0 - 1.0, h / 2.0) - mass(tau, -h / 2.0 - 1.0, -h / 2.0));
            let v = space_inner(tau, h).unwrap();
            assert!((v - exact).abs() < 1e-9, "tau {tau} h {h}: {v} vs {exact}");
        }
    }

    #[test]
    fn time_inner_is_at_least_mass_difference() {
        let (a, u, d) = (0.3, 1e-3, 1e-3);
        let v = time_inner(a, u, d).unwrap();
        let diff = u.powf(a - 1.0) - (u + d).powf(a - 1.0);
        assert!(v >= diff - 1e-9);
        assert!(v <= u.powf(a - 1.0) + (u + d).powf(a - 1.0));
    }

    #[test]
    fn coincident_points_give_zero() {
        assert_eq!(space_integral(0.3, 0.5, 0.0).unwrap(), 0.0);
        assert_eq!(space_integral(0.3, 0.5, 2.0).unwrap(), 0.0);
        assert_eq!(time_integral(0.3, 0.5, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn saturated_space_integral() {
        // For h = 1 and t tiny the two kernels barely overlap: inner ~ 2.
        let t = 1e-6;
        let v = space_integral(0.3, t, 1.0).unwrap();
        let exact = 2.0 * t.powf(0.3) / 0.3;
        assert!((v / exact - 1.0).abs() < 1e-8, "{v} vs {exact}");
    }

    #[test]
    fn rejects_exponents_outside_range() {
        assert!(holder_quadrature(0.3, 0.7, Direction::Space, 1.0, &[0.01, 0.1]).is_err());
        assert!(holder_quadrature(0.3, 0.3, Direction::Time, 0.5, &[0.01, 0.1]).is_err());
        assert!(holder_quadrature(1.3, 0.1, Direction::Time, 0.5, &[0.01, 0.1]).is_err());
    }
}
