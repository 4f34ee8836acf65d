//! Gauss–Legendre quadrature: fixed rules and a bisection-adaptive driver.
//!
//! Node/weight tables come from `gauss-quad` and are cached per degree.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::jacobi::GaussJacobi;
use gauss_quad::legendre::GaussLegendre;

use crate::error::{Error, Result};

/// Nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    fn build(degree: usize) -> Self {
        let gl = GaussLegendre::new(NonZeroUsize::new(degree).expect("degree >= 1"));
        let (nodes, weights) = gl.as_node_weight_pairs().iter().copied().unzip();
        Rule { nodes, weights }
    }

    #[inline]
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }

    /// Nodes mapped onto [a, b] with the matching scaled weights.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, w * half))
    }
}

/// Shared rule of the given degree.
pub fn rule(degree: usize) -> Arc<Rule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Rule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard
        .entry(degree)
        .or_insert_with(|| Arc::new(Rule::build(degree)))
        .clone()
}

/// `int_a^b (b - r)^pa (r - a)^pb f(r) dr` by a `degree`-point Gauss–Jacobi rule.
pub fn jacobi_integrate<F: FnMut(f64) -> f64>(
    a: f64,
    b: f64,
    pa: f64,
    pb: f64,
    degree: usize,
    mut f: F,
) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64, u64), Arc<Rule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let rule = {
        let mut guard = cache.lock().expect("quadrature cache poisoned");
        guard
            .entry((degree, pa.to_bits(), pb.to_bits()))
            .or_insert_with(|| {
                let gj = GaussJacobi::new(
                    NonZeroUsize::new(degree).expect("degree >= 1"),
                    pa.try_into().expect("exponent > -1"),
                    pb.try_into().expect("exponent > -1"),
                );
                let (nodes, weights) = gj.as_node_weight_pairs().iter().copied().unzip();
                Arc::new(Rule { nodes, weights })
            })
            .clone()
    };
    let half = 0.5 * (b - a);
    half.powf(pa + pb) * rule.integrate(a, b, &mut f)
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_depth: u32,
    /// Upper bound on accepted plus pending panels.
    pub max_panels: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            abs: 1e-14,
            rel: 1e-12,
            max_depth: 48,
            max_panels: 100_000,
        }
    }
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Tolerance {
            abs,
            rel,
            ..Default::default()
        }
    }
}

const PANEL_DEGREE: usize = 15;

/// Adaptive bisection on a 15-point panel rule: a panel is accepted when its
/// value agrees with the sum over its two halves.
pub fn adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::numeric(format!("non-finite integration limits [{a}, {b}]")));
    }
    let gl = rule(PANEL_DEGREE);
    let whole = gl.integrate(a, b, &f);
    // The global relative target is fixed from a first coarse estimate.
    let scale = whole.abs();
    let mut stack = vec![(a, b, whole, 0u32)];
    let mut total = 0.0;
    let mut width_total = 0.0;
    let mut panels = 0usize;
    let span = (b - a).abs();
    while let Some((lo, hi, est, depth)) = stack.pop() {
        panels += 1;
        if panels > tol.max_panels {
            return Err(Error::numeric(format!(
                "adaptive quadrature exceeded {} panels on [{a}, {b}]",
                tol.max_panels
            )));
        }
        let mid = 0.5 * (lo + hi);
        let left = gl.integrate(lo, mid, &f);
        let right = gl.integrate(mid, hi, &f);
        let refined = left + right;
        if !refined.is_finite() {
            return Err(Error::numeric(format!(
                "integrand not finite on [{lo}, {hi}]"
            )));
        }
        let share = (hi - lo).abs() / span;
        let target = (tol.abs.max(tol.rel * scale.max(refined.abs()))) * share.max(1e-300);
        if (refined - est).abs() <= target.max(f64::EPSILON * refined.abs()) {
            total += refined;
            width_total += (hi - lo).abs();
        } else if depth >= tol.max_depth {
            return Err(Error::numeric(format!(
                "adaptive quadrature did not converge on [{lo}, {hi}] (difference {:e})",
                (refined - est).abs()
            )));
        } else {
            stack.push((mid, hi, right, depth + 1));
            stack.push((lo, mid, left, depth + 1));
        }
    }
    debug_assert!((width_total - span).abs() <= 1e-9 * span);
    Ok(total)
}

/// Adaptive integration over consecutive breakpoints (kinks, peaks).
pub fn adaptive_split<F: Fn(f64) -> f64>(f: F, points: &[f64], tol: Tolerance) -> Result<f64> {
    let mut acc = 0.0;
    for w in points.windows(2) {
        if w[1] > w[0] {
            acc += adaptive(&f, w[0], w[1], tol)?;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_rule_is_exact_for_polynomials() {
        let r = rule(8);
        let v = r.integrate(0.0, 2.0, |x| x.powi(15));
        assert!((v - 2f64.powi(16) / 16.0).abs() < 1e-9);
    }

    #[test]
    fn jacobi_handles_endpoint_powers() {
        // int_0^2 (2-r)^{-1/2} r^{1/3} dr = 2^{5/6} B(1/2, 4/3)
        let v = jacobi_integrate(0.0, 2.0, -0.5, 1.0 / 3.0, 6, |_| 1.0);
        let beta = statrs::function::beta::beta(0.5, 4.0 / 3.0);
        assert!((v - 2f64.powf(5.0 / 6.0) * beta).abs() < 1e-13, "{v}");
    }

    #[test]
    fn adaptive_handles_peaks() {
        let v = adaptive(|x: f64| (-(x * x) / 1e-6).exp(), -1.0, 1.0, Tolerance::default()).unwrap();
        let exact = (std::f64::consts::PI * 1e-6).sqrt();
        assert!((v - exact).abs() < 1e-13, "{v} vs {exact}");
    }

    #[test]
    fn adaptive_reports_divergence() {
        let tol = Tolerance {
            max_depth: 6,
            ..Default::default()
        };
        assert!(adaptive(|x: f64| 1.0 / x, 0.0, 1.0, tol).is_err());
    }
}
