//! Exact series for the one-time covariance of `N(t1, .)`:
//!
//! ```text
//! Cov(N(t1, x), N(t1, y)) = q_0 t1 + sum_{n>=1} q_n cos(n pi (x - y)) (1 - e^{-2 pi^2 n^2 t1}) / (2 pi^2 n^2).
//! ```
//!
//! Modes past the coefficient table use the asymptote `A n^{gamma-1}`, summed
//! explicitly until the time factor saturates and in closed form after that.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{power_tail, RieszKernel};
use crate::noise::mode_variance;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SeriesValue {
    /// Series value including the tail estimate.
    pub value: f64,
    /// Sum over the coefficient table only (what an `N`-mode sampler sees).
    pub truncated: f64,
    /// Contribution of modes past the table.
    pub tail: f64,
    /// Bound on the error of `value`.
    pub error_bound: f64,
    /// `error_bound` exceeds `1e-8 |value|`.
    pub flagged: bool,
}

/// Past this `2 pi^2 n^2 t1` the factor `1 - e^{-2 pi^2 n^2 t1}` is 1 in double precision.
const SATURATION: f64 = 40.0;
const MAX_EXPLICIT: usize = 2_000_000;

fn check_time(t1: f64) -> Result<()> {
    if t1 > 0.0 && t1.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("time must be positive, got {t1}")))
    }
}

/// `r` reduced to `[-1, 1)`; the cosine series has period 2.
fn reduce(r: f64) -> f64 {
    crate::kernel::reduce_torus(r)
}

/// Series with `cos(n pi r)` weights; `r = 0` gives the variance.
fn series(kernel: &RieszKernel, t1: f64, r: f64) -> SeriesValue {
    let mut truncated = 0.0;
    for (n, &q) in kernel.q().iter().enumerate() {
        truncated += mode_variance(q, n, t1) * (PI * n as f64 * r).cos();
    }
    let big_n = kernel.mode_count();
    let amp = kernel.amplitude();
    let gamma = kernel.gamma();
    let s = 3.0 - gamma;
    // Asymptotic coefficients differ from q_n by at most 4 gamma / (pi^2 n^2).
    let coeff_err = 4.0 * gamma / (PI * PI) / (2.0 * PI * PI) * power_tail(4.0, big_n);
    if amp == 0.0 {
        return SeriesValue {
            value: truncated,
            truncated,
            tail: 0.0,
            error_bound: 0.0,
            flagged: false,
        };
    }
    let n_sat = ((SATURATION / (2.0 * PI * PI * t1)).sqrt().ceil() as usize).clamp(big_n, MAX_EXPLICIT);
    let mut tail = 0.0;
    for n in big_n + 1..=n_sat {
        tail += mode_variance(amp * (n as f64).powf(gamma - 1.0), n, t1) * (PI * n as f64 * r).cos();
    }
    let rest = amp / (2.0 * PI * PI) * power_tail(s, n_sat);
    let phase = PI * n_sat as f64 * reduce(r).abs();
    let (rest_value, rest_bound) = if phase < 1e-3 {
        // cos(n pi r) ~ 1 where the remainder has its weight.
        (rest, rest * 4.0 * phase.powf(s - 1.0))
    } else {
        // Oscillating remainder: Abel summation bounds it by the first term
        // over |sin(pi r / 2)|, or by its absolute sum.
        let half = (0.5 * PI * r).sin().abs();
        let first = amp / (2.0 * PI * PI) * ((n_sat + 1) as f64).powf(-s);
        (0.0, if half > 0.0 { rest.min(first / half) } else { rest })
    };
    tail += rest_value;
    let value = truncated + tail;
    let error_bound = coeff_err + rest_bound;
    SeriesValue {
        value,
        truncated,
        tail,
        error_bound,
        flagged: error_bound > 1e-8 * value.abs(),
    }
}

/// `Var N(t1, x)`, independent of `x`.
pub fn variance_of_n(kernel: &RieszKernel, t1: f64) -> Result<SeriesValue> {
    check_time(t1)?;
    Ok(series(kernel, t1, 0.0))
}

/// `Cov(N(t1, x_k), N(t1, x_k'))` with `x_k - x_k' = lag * eps^2`.
pub fn covariance_of_n(kernel: &RieszKernel, t1: f64, lag: i64, epsilon: f64) -> Result<SeriesValue> {
    check_time(t1)?;
    if lag == 0 {
        return Err(Error::domain("lag must be non-zero; use variance_of_n"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::domain(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(series(kernel, t1, lag as f64 * epsilon * epsilon))
}

/// Covariance at an arbitrary separation `r` (zero allowed).
pub fn covariance_at(kernel: &RieszKernel, t1: f64, r: f64) -> Result<SeriesValue> {
    check_time(t1)?;
    Ok(series(kernel, t1, r))
}
