//! Solution paths on a space-time lattice.
//!
//! Constant `sigma` uses the exact spectral sampler from [`crate::noise`];
//! general `sigma(t, x, u)` uses explicit finite differences with
//! `dt <= dx^2 / 4`. Also home to the factorization identity check and the
//! second moment of the factorization process `Y_alpha`.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, gamma_lr};

use crate::error::{Error, Result};
use crate::kernel::{power_tail, RieszKernel};
use crate::noise::{Lattice, LatticeSynth, NoiseIncrements, OuTransition, SpectralState};
use crate::quad::{self, Tolerance};
use crate::rng::RngSpec;

pub type SigmaFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum SigmaKind {
    Constant(f64),
    Function(SigmaFn),
}

impl fmt::Debug for SigmaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigmaKind::Constant(c) => write!(f, "Constant({c})"),
            SigmaKind::Function(_) => write!(f, "Function(..)"),
        }
    }
}

/// Diffusion coefficient with its declared bounds `c1 <= sigma <= c2` and
/// Lipschitz constant in `u`.
#[derive(Debug, Clone)]
pub struct SigmaSpec {
    pub kind: SigmaKind,
    pub c1: f64,
    pub c2: f64,
    pub lip: f64,
}

impl SigmaSpec {
    /// Constant coefficient; `0` is allowed for deterministic runs.
    pub fn constant(value: f64) -> Result<Self> {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::Config(format!("constant sigma must be finite and >= 0, got {value}")));
        }
        Ok(SigmaSpec {
            kind: SigmaKind::Constant(value),
            c1: value,
            c2: value,
            lip: 0.0,
        })
    }

    pub fn function<F>(f: F, c1: f64, c2: f64, lip: f64) -> Result<Self>
    where
        F: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    {
        if !(c1 > 0.0 && c2 >= c1 && c2.is_finite() && lip >= 0.0 && lip.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 < c1 <= c2 < inf and lip >= 0, got c1={c1}, c2={c2}, lip={lip}"
            )));
        }
        Ok(SigmaSpec {
            kind: SigmaKind::Function(Arc::new(f)),
            c1,
            c2,
            lip,
        })
    }

    /// The value of a constant coefficient.
    pub fn constant_value(&self) -> Option<f64> {
        match self.kind {
            SigmaKind::Constant(c) => Some(c),
            SigmaKind::Function(_) => None,
        }
    }

    /// `sigma(t, x, u)` with the bound contract enforced.
    #[inline]
    pub fn eval(&self, t: f64, x: f64, u: f64) -> Result<f64> {
        let value = match &self.kind {
            SigmaKind::Constant(c) => return Ok(*c),
            SigmaKind::Function(f) => f(t, x, u),
        };
        if value >= self.c1 && value <= self.c2 {
            Ok(value)
        } else {
            Err(Error::Contract {
                t,
                x,
                u,
                value,
                lo: self.c1,
                hi: self.c2,
            })
        }
    }

    /// Largest observed `|sigma(t,x,u) - sigma(t,x,v)| / |u - v|` over random
    /// triples; errors when it exceeds the declared constant.
    pub fn check_lipschitz(&self, samples: usize, rng: RngSpec) -> Result<f64> {
        let f = match &self.kind {
            SigmaKind::Constant(_) => return Ok(0.0),
            SigmaKind::Function(f) => f,
        };
        let mut g = rng.rng();
        let mut worst = 0.0f64;
        for _ in 0..samples {
            let t: f64 = g.random();
            let x: f64 = g.random_range(-1.0..1.0);
            let u: f64 = g.random_range(-10.0..10.0);
            let v: f64 = g.random_range(-10.0..10.0);
            if u == v {
                continue;
            }
            worst = worst.max((f(t, x, u) - f(t, x, v)).abs() / (u - v).abs());
        }
        if worst > self.lip * (1.0 + 1e-9) + 1e-15 {
            return Err(Error::Config(format!(
                "observed Lipschitz ratio {worst} exceeds declared {}",
                self.lip
            )));
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathMeta {
    pub gamma: f64,
    pub modes: usize,
    pub seed: u64,
    pub stream: u64,
}

/// Values `u[m][j]` at `t = m dt`, `x = -1 + j dx`, `j = 0..=J` with the
/// periodic copy `u[m][J] = u[m][0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePath {
    pub dx: f64,
    pub dt: f64,
    pub points: usize,
    pub steps: usize,
    pub values: Vec<f64>,
    pub meta: PathMeta,
}

impl LatticePath {
    fn with_capacity(lattice: Lattice, dt: f64, steps: usize, meta: PathMeta) -> Self {
        LatticePath {
            dx: lattice.dx(),
            dt,
            points: lattice.points,
            steps,
            values: Vec::with_capacity((steps + 1) * (lattice.points + 1)),
            meta,
        }
    }

    fn push_row(&mut self, row: &[f64]) {
        self.values.extend_from_slice(row);
        self.values.push(row[0]);
    }

    #[inline]
    pub fn u(&self, m: usize, j: usize) -> f64 {
        self.values[m * (self.points + 1) + j]
    }

    pub fn row(&self, m: usize) -> &[f64] {
        let w = self.points + 1;
        &self.values[m * w..(m + 1) * w]
    }

    pub fn time(&self, m: usize) -> f64 {
        m as f64 * self.dt
    }

    pub fn x(&self, j: usize) -> f64 {
        -1.0 + j as f64 * self.dx
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps)
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV with header `m,j,t,x,u`; one row per lattice node.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "m,j,t,x,u")?;
        for m in 0..=self.steps {
            for j in 0..=self.points {
                writeln!(
                    w,
                    "{m},{j},{:.12e},{:.12e},{:.17e}",
                    self.time(m),
                    self.x(j),
                    self.u(m, j)
                )?;
            }
        }
        Ok(())
    }
}

/// Initial data for the spectral solver.
#[derive(Debug, Clone, Default)]
pub enum InitialData {
    #[default]
    Zero,
    /// Cosine and sine amplitudes of `u_0`.
    Spectral { a: Vec<f64>, b: Vec<f64> },
}

/// Step count `ceil(T/dt)` and the matching step `T/M <= dt`.
pub fn step_grid(t_end: f64, dt: f64) -> Result<(usize, f64)> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::domain(format!("horizon must be positive, got {t_end}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::domain(format!("time step must be positive, got {dt}")));
    }
    let m = (t_end / dt - 1e-9).ceil().max(1.0) as usize;
    Ok((m, t_end / m as f64))
}

/// Exact spectral path `u = e^{t Delta} u_0 + sigma N` sampled on `lattice`.
pub fn solve_constant_sigma(
    kernel: Arc<RieszKernel>,
    sigma: f64,
    u0: &InitialData,
    t_end: f64,
    dt: f64,
    lattice: Lattice,
    rng: RngSpec,
) -> Result<LatticePath> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Config(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    let (steps, dt) = step_grid(t_end, dt)?;
    let meta = PathMeta {
        gamma: kernel.gamma(),
        modes: kernel.mode_count(),
        seed: rng.seed,
        stream: rng.stream,
    };
    let mut state = match u0 {
        InitialData::Zero => SpectralState::zero(kernel.clone()),
        InitialData::Spectral { a, b } => SpectralState::from_amplitudes(kernel.clone(), a, b)?,
    };
    let tr = OuTransition::scaled(&kernel, dt, sigma)?;
    let mut synth = LatticeSynth::new(lattice);
    let mut row = vec![0.0; lattice.points];
    let mut path = LatticePath::with_capacity(lattice, dt, steps, meta);
    let mut g = rng.rng();
    synth.synthesize(&state.a, &state.b, &mut row);
    path.push_row(&row);
    for _ in 0..steps {
        state.advance(&tr, &mut g);
        synth.synthesize(&state.a, &state.b, &mut row);
        path.push_row(&row);
    }
    if !path.values.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric("spectral path produced non-finite values"));
    }
    Ok(path)
}

/// Explicit Euler–Maruyama finite differences for general `sigma`.
pub fn solve_general(
    kernel: &RieszKernel,
    sigma: &SigmaSpec,
    u0: &[f64],
    t_end: f64,
    dt: f64,
    lattice: Lattice,
    rng: RngSpec,
) -> Result<LatticePath> {
    let (steps, dt) = step_grid(t_end, dt)?;
    let dx = lattice.dx();
    if dt > dx * dx / 4.0 * (1.0 + 1e-12) {
        return Err(Error::Config(format!(
            "explicit scheme needs dt <= dx^2/4 = {:e}, got {dt:e}",
            dx * dx / 4.0
        )));
    }
    let j_len = lattice.points;
    if u0.len() != j_len {
        return Err(Error::Config(format!(
            "initial profile has {} values, lattice has {j_len}",
            u0.len()
        )));
    }
    let meta = PathMeta {
        gamma: kernel.gamma(),
        modes: kernel.mode_count(),
        seed: rng.seed,
        stream: rng.stream,
    };
    let r = dt / (dx * dx);
    let xs = lattice.positions();
    let mut noise = NoiseIncrements::new(kernel, lattice, dt)?;
    let mut df = vec![0.0; j_len];
    let mut cur = u0.to_vec();
    let mut next = vec![0.0; j_len];
    let mut path = LatticePath::with_capacity(lattice, dt, steps, meta);
    path.push_row(&cur);
    let mut g = rng.rng();
    for m in 0..steps {
        let t = m as f64 * dt;
        noise.draw(&mut g, &mut df);
        for j in 0..j_len {
            let left = cur[(j + j_len - 1) % j_len];
            let right = cur[(j + 1) % j_len];
            let s = sigma.eval(t, xs[j], cur[j])?;
            next[j] = cur[j] + r * (left - 2.0 * cur[j] + right) + s * df[j];
        }
        std::mem::swap(&mut cur, &mut next);
        if !cur.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric(format!("lattice path went non-finite at step {}", m + 1)));
        }
        path.push_row(&cur);
    }
    Ok(path)
}

/// Exact one-point variance of the explicit scheme with `sigma = 1`, `u_0 = 0`
/// after `steps` steps: every lattice Fourier mode is an eigenvector of the
/// discrete Laplacian with multiplier `1 - 4 r sin^2(n pi dx / 2)`.
pub fn lattice_scheme_variance(kernel: &RieszKernel, dx: f64, dt: f64, steps: usize) -> f64 {
    let r = dt / (dx * dx);
    let mut acc = kernel.q()[0] * dt * steps as f64;
    for (n, q) in kernel.q().iter().enumerate().skip(1) {
        let s = (0.5 * PI * n as f64 * dx).sin();
        let lam = 1.0 - 4.0 * r * s * s;
        let l2 = lam * lam;
        let geo = if (1.0 - l2).abs() < 1e-14 {
            steps as f64
        } else {
            (1.0 - l2.powi(steps as i32)) / (1.0 - l2)
        };
        acc += q * dt * geo;
    }
    acc
}

/// Brownian path on a uniform grid, stored as increments.
#[derive(Debug, Clone)]
pub struct BrownianPath {
    pub h: f64,
    pub increments: Vec<f64>,
}

impl BrownianPath {
    pub fn sample(t_end: f64, h: f64, rng: RngSpec) -> Result<Self> {
        let k = cells(t_end, h)?;
        let sd = h.sqrt();
        let mut g = rng.rng();
        let increments = (0..k)
            .map(|_| sd * g.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(BrownianPath { h, increments })
    }

    pub fn zero(t_end: f64, h: f64) -> Result<Self> {
        Ok(BrownianPath {
            h,
            increments: vec![0.0; cells(t_end, h)?],
        })
    }

    pub fn horizon(&self) -> f64 {
        self.h * self.increments.len() as f64
    }

    /// Same path on a grid `factor` times finer (Brownian-bridge fill-in).
    pub fn refine(&self, factor: usize, rng: RngSpec) -> BrownianPath {
        let h = self.h / factor as f64;
        let sd = h.sqrt();
        let mut g = rng.rng();
        let mut out = Vec::with_capacity(self.increments.len() * factor);
        let mut z = vec![0.0; factor];
        for &d in &self.increments {
            for v in z.iter_mut() {
                *v = sd * g.sample::<f64, _>(StandardNormal);
            }
            let shift = (z.iter().sum::<f64>() - d) / factor as f64;
            out.extend(z.iter().map(|v| v - shift));
        }
        BrownianPath { h, increments: out }
    }
}

fn cells(t_end: f64, h: f64) -> Result<usize> {
    if !(t_end > 0.0 && h > 0.0 && h <= t_end) {
        return Err(Error::domain(format!("need 0 < h <= T, got h={h}, T={t_end}")));
    }
    let k = t_end / h;
    let kr = k.round();
    if (k - kr).abs() > 1e-6 * k {
        return Err(Error::domain(format!("step {h} does not divide horizon {t_end}")));
    }
    Ok(kr as usize)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FactorizationReport {
    pub alpha: f64,
    pub mode: usize,
    pub t: f64,
    pub dt_fine: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub rel_err: f64,
}

/// Unnormalized lower incomplete gamma `int_0^x s^{a-1} e^{-s} ds`.
fn lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(a, x) * gamma(a)
    }
}

/// `int_0^v u^{p-1} e^{-lam u} du`.
fn power_exp_integral(p: f64, lam: f64, v: f64) -> f64 {
    if lam == 0.0 {
        v.powf(p) / p
    } else {
        lam.powf(-p) * lower_gamma(p, lam * v)
    }
}

fn check_alpha(alpha: f64, gamma: f64) -> Result<()> {
    let hi = (2.0 - gamma) / 4.0;
    if alpha > 0.0 && alpha < hi {
        Ok(())
    } else {
        Err(Error::domain(format!("alpha must lie in (0, {hi}), got {alpha}")))
    }
}

/// Linear convolution `y_i = sum_{m=1}^{i} w_m d_{i-m}`, `i = 0..=K`.
fn causal_convolution(w: &[f64], d: &[f64]) -> Vec<f64> {
    let k = d.len();
    let size = (2 * k + 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut a = vec![Complex64::default(); size];
    let mut b = vec![Complex64::default(); size];
    // w is indexed from 1: place w_m at position m.
    for (m, v) in w.iter().enumerate() {
        a[m + 1].re = *v;
    }
    for (i, v) in d.iter().enumerate() {
        b[i].re = *v;
    }
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    inv.process(&mut a);
    let scale = 1.0 / size as f64;
    (0..=k).map(|i| a[i].re * scale).collect()
}

/// Per-mode factorization identity on one Brownian path.
///
/// The path is taken piecewise linear, for which
/// `int_0^t e^{-lam(t-s)} d beta(s)` and `Y(r_i)` at grid nodes are exact
/// (cell integrals of the kernels in closed form). The outer integral against
/// `(t-r)^{alpha-1} e^{-lam(t-r)}` uses product integration: `Y` is
/// interpolated linearly and the singular weight is integrated exactly.
pub fn factorization_check_on(
    alpha: f64,
    gamma: f64,
    mode: usize,
    path: &BrownianPath,
) -> Result<FactorizationReport> {
    check_alpha(alpha, gamma)?;
    let lam = PI * PI * (mode * mode) as f64;
    let h = path.h;
    let k = path.increments.len();
    let t = path.horizon();

    let cell = if lam == 0.0 {
        1.0
    } else {
        -(-lam * h).exp_m1() / (lam * h)
    };
    let lhs: f64 = path
        .increments
        .iter()
        .enumerate()
        .map(|(i, d)| d * (-lam * (t - (i + 1) as f64 * h)).exp() * cell)
        .sum();

    let phi: Vec<f64> = (0..=k)
        .map(|m| power_exp_integral(1.0 - alpha, lam, m as f64 * h))
        .collect();
    let w: Vec<f64> = phi.windows(2).map(|p| (p[1] - p[0]) / h).collect();
    let y = causal_convolution(&w, &path.increments);

    let near = near_cell_weights(alpha, lam, h, k);

    // Moments of K(u) = u^{alpha-1} e^{-lam u} on [u_lo, u_hi], u = t - r.
    let m0 = |u: f64| power_exp_integral(alpha, lam, u);
    let m1 = |u: f64| power_exp_integral(alpha + 1.0, lam, u);
    let d = &path.increments;
    let inc = |i: isize| if i >= 0 { d[i as usize] } else { 0.0 };
    let wt = |m: usize| w[m - 1];
    let mut acc = 0.0;
    for i in 0..k {
        let u_hi = t - i as f64 * h;
        let u_lo = t - (i + 1) as f64 * h;
        let k0 = m0(u_hi) - m0(u_lo);
        let k1 = m1(u_hi) - m1(u_lo);
        // Far part of Y: the near cells' contributions are removed at both ends.
        let mut y_lo = y[i];
        let mut y_hi = y[i + 1];
        for back in 0..NEAR_CELLS {
            let c = inc(i as isize - back as isize);
            if back >= 1 {
                y_lo -= c * wt(back);
            }
            y_hi -= c * wt(back + 1);
        }
        acc += y_lo * (k1 - u_lo * k0) / h + y_hi * (u_hi * k0 - k1) / h;
        // Near part: cell i - back contributes D_back(v) = phi(v + back h) - phi(v + (back-1) h).
        let p = &near[i];
        for back in 0..NEAR_CELLS {
            let weight = if back == 0 { p[0] } else { p[back] - p[back - 1] };
            acc += inc(i as isize - back as isize) * weight;
        }
    }
    let rhs = (PI * alpha).sin() / PI * acc;
    let rel_err = (lhs - rhs).abs() / lhs.abs().max(f64::EPSILON);
    if !(lhs.is_finite() && rhs.is_finite()) {
        return Err(Error::numeric("factorization integrals are not finite"));
    }
    Ok(FactorizationReport {
        alpha,
        mode,
        t,
        dt_fine: h,
        lhs,
        rhs,
        rel_err,
    })
}

/// Cells before the current one whose contribution to `Y` is integrated exactly.
const NEAR_CELLS: usize = 12;
const NEAR_DEGREE: usize = 16;

/// `P[i][e] = (1/h) int_{cell i} K(t - r) phi(r - r_i + e h) dr` for `e < NEAR_CELLS`,
/// with `K(u) = u^{alpha-1} e^{-lam u}` and `phi(v) = int_0^v s^{-alpha} e^{-lam s} ds`.
///
/// `phi(v)` behaves like `v^{1-alpha}` at `e = 0` and is expanded in its power
/// series there; the last cell carries the `(t-r)^{alpha-1}` endpoint singularity.
/// Both singularities are absorbed into Gauss–Jacobi weights.
fn near_cell_weights(alpha: f64, lam: f64, h: f64, cells: usize) -> Vec<[f64; NEAR_CELLS]> {
    let mut series = Vec::new();
    let mut coeff = 1.0;
    for j in 0..40 {
        if j > 0 {
            coeff *= -lam / j as f64;
        }
        let c = coeff / (j as f64 + 1.0 - alpha);
        series.push((c, j as f64 + 1.0 - alpha));
        if (coeff * h.powi(j as i32)).abs() < 1e-18 {
            break;
        }
    }
    let kern = |u: f64| u.powf(alpha - 1.0) * (-lam * u).exp();
    (0..cells)
        .map(|i| {
            // Local variable v = r - r_i in [0, h]; u = t - r = u_lo + h - v.
            let u_lo = (cells - 1 - i) as f64 * h;
            let last = i + 1 == cells;
            let mut out = [0.0; NEAR_CELLS];
            for (e, slot) in out.iter_mut().enumerate() {
                let shift = e as f64 * h;
                let val = if e == 0 {
                    series
                        .iter()
                        .map(|&(c, pw)| {
                            c * if last {
                                quad::jacobi_integrate(0.0, h, alpha - 1.0, pw, NEAR_DEGREE, |v| {
                                    (-lam * (h - v)).exp()
                                })
                            } else {
                                quad::jacobi_integrate(0.0, h, 0.0, pw, NEAR_DEGREE, |v| {
                                    kern(u_lo + h - v)
                                })
                            }
                        })
                        .sum::<f64>()
                } else if last {
                    quad::jacobi_integrate(0.0, h, alpha - 1.0, 0.0, NEAR_DEGREE, |v| {
                        (-lam * (h - v)).exp() * power_exp_integral(1.0 - alpha, lam, v + shift)
                    })
                } else {
                    quad::rule(NEAR_DEGREE).integrate(0.0, h, |v| {
                        kern(u_lo + h - v) * power_exp_integral(1.0 - alpha, lam, v + shift)
                    })
                };
                *slot = val / h;
            }
            out
        })
        .collect()
}

pub fn factorization_check(
    alpha: f64,
    gamma: f64,
    mode: usize,
    t_end: f64,
    dt_fine: f64,
    rng: RngSpec,
) -> Result<FactorizationReport> {
    check_alpha(alpha, gamma)?;
    let path = BrownianPath::sample(t_end, dt_fine, rng)?;
    factorization_check_on(alpha, gamma, mode, &path)
}

/// Reports on successively `factor`-times refined versions of one Brownian
/// path, starting from step `dt_coarse`.
#[allow(clippy::too_many_arguments)]
pub fn factorization_refinement(
    alpha: f64,
    gamma: f64,
    mode: usize,
    t_end: f64,
    dt_coarse: f64,
    factor: usize,
    levels: usize,
    rng: RngSpec,
) -> Result<Vec<FactorizationReport>> {
    check_alpha(alpha, gamma)?;
    if factor < 2 {
        return Err(Error::Config(format!("refinement factor must be >= 2, got {factor}")));
    }
    let mut path = BrownianPath::sample(t_end, dt_coarse, rng)?;
    let mut out = Vec::with_capacity(levels);
    for level in 0..levels {
        if level > 0 {
            path = path.refine(factor, rng.derive(level as u64));
        }
        out.push(factorization_check_on(alpha, gamma, mode, &path)?);
    }
    Ok(out)
}

/// Relative errors of one mode across refinement levels, over many paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementSummary {
    pub mode: usize,
    pub steps: Vec<f64>,
    /// RMS over paths of `|lhs - rhs|` divided by the exact standard
    /// deviation of `lhs`; unlike the relative error this does not blow up on
    /// paths where `lhs` happens to be near zero.
    pub rms_scaled_err: Vec<f64>,
    pub max_rel_err: Vec<f64>,
}

impl RefinementSummary {
    /// Scaled error at the finest step is below the coarsest.
    pub fn decreases(&self) -> bool {
        match (self.rms_scaled_err.first(), self.rms_scaled_err.last()) {
            (Some(a), Some(b)) => self.rms_scaled_err.len() >= 2 && b < a,
            _ => false,
        }
    }
}

/// [`factorization_refinement`] on `paths` independent paths for each mode.
#[allow(clippy::too_many_arguments)]
pub fn factorization_study(
    alpha: f64,
    gamma: f64,
    modes: &[usize],
    t_end: f64,
    dt_coarse: f64,
    factor: usize,
    levels: usize,
    paths: usize,
    rng: RngSpec,
) -> Result<Vec<RefinementSummary>> {
    if paths == 0 || levels == 0 {
        return Err(Error::Config("need >= 1 path and >= 1 level".into()));
    }
    modes
        .iter()
        .map(|&mode| {
            let runs = crate::parallel::map_collect(paths, rng.derive(mode as u64), |i, _| {
                factorization_refinement(
                    alpha,
                    gamma,
                    mode,
                    t_end,
                    dt_coarse,
                    factor,
                    levels,
                    rng.derive2(mode as u64, i as u64),
                )
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let steps = runs[0].iter().map(|r| r.dt_fine).collect();
            // sd of int_0^t e^{-lam(t-s)} d beta(s).
            let lam = PI * PI * (mode * mode) as f64;
            let sd = if lam == 0.0 {
                t_end.sqrt()
            } else {
                ((1.0 - (-2.0 * lam * t_end).exp()) / (2.0 * lam)).sqrt()
            };
            let rms_scaled_err = (0..levels)
                .map(|l| {
                    let ms = runs.iter().map(|r| ((r[l].lhs - r[l].rhs) / sd).powi(2)).sum::<f64>();
                    (ms / paths as f64).sqrt()
                })
                .collect();
            let max_rel_err = (0..levels)
                .map(|l| runs.iter().map(|r| r[l].rel_err).fold(0.0, f64::max))
                .collect();
            Ok(RefinementSummary {
                mode,
                steps,
                rms_scaled_err,
                max_rel_err,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct YAlphaMoment {
    pub alpha: f64,
    pub r: f64,
    /// `sum_n q_n int_0^r u^{-2 alpha} e^{-2 pi^2 n^2 u} du` (with `C_2 = 1`).
    pub value: f64,
    /// Asymptotic tail beyond the coefficient table.
    pub tail: f64,
    /// `q_0 + Gamma(1 - 2 alpha) sum_n q_n n^{4 alpha - 2}`.
    pub bound_series: f64,
    /// `value / bound_series`.
    pub constant: f64,
    pub converged: bool,
}

/// Second moment of `Y_alpha(r, z)` for unit `sigma`, independent of `z`.
///
/// Each mode integral is computed by quadrature after `v = u^{1-2 alpha}`,
/// which removes the endpoint singularity. Modes past the table use the
/// coefficient asymptote and the saturated integral.
pub fn y_alpha_second_moment(alpha: f64, kernel: &RieszKernel, r: f64) -> Result<YAlphaMoment> {
    check_alpha(alpha, kernel.gamma())?;
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::domain(format!("time must be positive, got {r}")));
    }
    let p = 1.0 - 2.0 * alpha;
    let v_max = r.powf(p);
    let tol = Tolerance::new(1e-300, 1e-11);
    let g12 = gamma(p);
    let mut value = 0.0;
    let mut bound = 0.0;
    for (n, &q) in kernel.q().iter().enumerate() {
        if q == 0.0 {
            continue;
        }
        let rate = 2.0 * PI * PI * (n * n) as f64;
        let integral = if n == 0 {
            r.powf(p) / p
        } else {
            // The integrand e^{-rate v^{1/p}} is negligible past v_cut.
            let v_cut = ((40.0 / rate).powf(p)).min(v_max);
            quad::adaptive(|v: f64| (-rate * v.powf(1.0 / p)).exp(), 0.0, v_cut, tol)? / p
        };
        value += q * integral;
        bound += if n == 0 {
            q
        } else {
            q * (n as f64).powf(4.0 * alpha - 2.0) * g12
        };
    }
    let big_n = kernel.mode_count();
    let s = 3.0 - kernel.gamma() - 4.0 * alpha;
    let amp = kernel.amplitude();
    let tail = amp * (2.0 * PI * PI).powf(-p) * g12 * power_tail(s, big_n);
    value += tail;
    bound += amp * g12 * power_tail(s, big_n);
    let converged = tail <= 1e-2 * value || amp == 0.0;
    let constant = if bound > 0.0 { value / bound } else { 0.0 };
    Ok(YAlphaMoment {
        alpha,
        r,
        value,
        tail,
        bound_series: bound,
        constant,
        converged,
    })
}

/// Monte Carlo estimate of `E[Y_alpha(r, 0)^2]` with the table's modes only.
///
/// Each mode's stochastic integral over a cell is sampled exactly: its
/// projection on the cell's Brownian increment plus an independent remainder.
pub fn y_alpha_monte_carlo(
    alpha: f64,
    kernel: &RieszKernel,
    r: f64,
    cells_per_path: usize,
    trials: usize,
    rng: RngSpec,
) -> Result<crate::stats::Moments> {
    check_alpha(alpha, kernel.gamma())?;
    let h = r / cells_per_path as f64;
    let p = 1.0 - alpha;
    let p2 = 1.0 - 2.0 * alpha;
    // Per mode and cell (u in [m h, (m+1) h] before r): mean weight and residual sd.
    let weights: Vec<Vec<(f64, f64)>> = kernel
        .q()
        .iter()
        .enumerate()
        .map(|(n, _)| {
            let lam = PI * PI * (n * n) as f64;
            (0..cells_per_path)
                .map(|m| {
                    let (a, b) = (m as f64 * h, (m + 1) as f64 * h);
                    let first = power_exp_integral(p, lam, b) - power_exp_integral(p, lam, a);
                    let second =
                        power_exp_integral(p2, 2.0 * lam, b) - power_exp_integral(p2, 2.0 * lam, a);
                    let mean = first / h;
                    (mean, (second - first * first / h).max(0.0).sqrt())
                })
                .collect()
        })
        .collect();
    let sd = h.sqrt();
    let moments = crate::parallel::map_reduce(trials, rng, |_, g| {
        let mut y = 0.0;
        for (n, q) in kernel.q().iter().enumerate() {
            let mut yn = 0.0;
            for (mean, res) in &weights[n] {
                let db = sd * g.sample::<f64, _>(StandardNormal);
                let z: f64 = g.sample(StandardNormal);
                yn += mean * db + res * z;
            }
            // At z = 0 only the cosine part contributes.
            y += q.sqrt() * yn;
        }
        y * y
    });
    Ok(moments)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(modes: usize) -> Arc<RieszKernel> {
        Arc::new(RieszKernel::new(0.5, modes).unwrap())
    }

    #[test]
    fn zero_sigma_zero_data_is_zero() {
        let p = solve_constant_sigma(
            kernel(32),
            0.0,
            &InitialData::Zero,
            0.01,
            1e-3,
            Lattice::new(16).unwrap(),
            RngSpec::new(1, 0),
        )
        .unwrap();
        assert_eq!(p.sup_abs(), 0.0);
    }

    #[test]
    fn single_mode_heat_decay() {
        let u0 = InitialData::Spectral {
            a: vec![0.0, 1.0],
            b: vec![],
        };
        let l = Lattice::new(32).unwrap();
        let p = solve_constant_sigma(kernel(32), 0.0, &u0, 0.05, 0.01, l, RngSpec::new(1, 0)).unwrap();
        for m in 0..=p.steps {
            for j in 0..=p.points {
                let exact = (-PI * PI * p.time(m)).exp() * (PI * p.x(j)).cos();
                assert!((p.u(m, j) - exact).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn path_is_periodic_and_starts_at_u0() {
        let l = Lattice::new(16).unwrap();
        let u0: Vec<f64> = (0..16).map(|j| (j as f64).sin()).collect();
        let sigma = SigmaSpec::constant(1.0).unwrap();
        let p = solve_general(&kernel(32), &sigma, &u0, 0.01, 1e-3, l, RngSpec::new(2, 0)).unwrap();
        assert_eq!(&p.row(0)[..16], &u0[..]);
        for m in 0..=p.steps {
            assert_eq!(p.u(m, 0), p.u(m, 16));
        }
    }

    #[test]
    fn stability_violation_is_config_error() {
        let l = Lattice::new(64).unwrap();
        let sigma = SigmaSpec::constant(1.0).unwrap();
        let r = solve_general(&kernel(8), &sigma, &[0.0; 64], 0.01, 1e-3, l, RngSpec::new(0, 0));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn sigma_contract_violation_names_the_point() {
        let l = Lattice::new(16).unwrap();
        let sigma = SigmaSpec::function(|_, _, u| 1.0 + u, 0.5, 2.0, 1.0).unwrap();
        let r = solve_general(&kernel(8), &sigma, &[3.0; 16], 1e-3, 1e-3, l, RngSpec::new(0, 0));
        assert!(matches!(r, Err(Error::Contract { u, .. }) if u == 3.0));
    }

    #[test]
    fn constant_sigma_scales_path_exactly() {
        let l = Lattice::new(16).unwrap();
        let one = SigmaSpec::constant(1.0).unwrap();
        let three = SigmaSpec::constant(3.0).unwrap();
        let k = kernel(32);
        let a = solve_general(&k, &one, &[0.0; 16], 0.01, 1e-3, l, RngSpec::new(4, 4)).unwrap();
        let b = solve_general(&k, &three, &[0.0; 16], 0.01, 1e-3, l, RngSpec::new(4, 4)).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((3.0 * x - y).abs() <= 1e-12 * y.abs().max(1e-300));
        }
    }

    #[test]
    fn lipschitz_spot_check() {
        let good = SigmaSpec::function(|_, _, u: f64| 1.5 + 0.5 * u.sin(), 1.0, 2.0, 0.5).unwrap();
        assert!(good.check_lipschitz(1000, RngSpec::new(1, 1)).unwrap() <= 0.5);
        let bad = SigmaSpec::function(|_, _, u: f64| 1.5 + 0.5 * (3.0 * u).sin(), 1.0, 2.0, 0.5).unwrap();
        assert!(bad.check_lipschitz(1000, RngSpec::new(1, 1)).is_err());
    }

    #[test]
    fn path_csv_header_and_rows() {
        let p = solve_constant_sigma(
            kernel(8),
            1.0,
            &InitialData::Zero,
            2e-3,
            1e-3,
            Lattice::new(4).unwrap(),
            RngSpec::new(1, 0),
        )
        .unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("m,j,t,x,u\n"));
        assert_eq!(text.lines().count(), 1 + 3 * 5);
    }

    #[test]
    fn factorization_normalization_and_zero_path() {
        assert!(((PI * 0.5).sin() / PI - 1.0 / PI).abs() < 1e-16);
        let path = BrownianPath::zero(0.05, 1e-4).unwrap();
        let rep = factorization_check_on(0.2, 0.5, 1, &path).unwrap();
        assert_eq!(rep.lhs, 0.0);
        assert_eq!(rep.rhs, 0.0);
        assert!(factorization_check(0.4, 0.5, 1, 0.05, 1e-4, RngSpec::new(0, 0)).is_err());
    }

    #[test]
    fn refined_path_keeps_coarse_increments() {
        let p = BrownianPath::sample(0.01, 1e-3, RngSpec::new(3, 0)).unwrap();
        let f = p.refine(4, RngSpec::new(3, 1));
        for (i, d) in p.increments.iter().enumerate() {
            let s: f64 = f.increments[4 * i..4 * i + 4].iter().sum();
            assert!((s - d).abs() < 1e-15);
        }
    }

    #[test]
    fn causal_convolution_matches_direct() {
        let w = [0.5, -1.0, 2.0, 0.25];
        let d = [1.0, 2.0, -3.0, 0.5];
        let y = causal_convolution(&w, &d);
        for i in 0..=4 {
            let direct: f64 = (1..=i).map(|m| w[m - 1] * d[i - m]).sum();
            assert!((y[i] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn y_alpha_moment_zero_kernel() {
        let k = RieszKernel::zero(0.5, 16).unwrap();
        assert_eq!(y_alpha_second_moment(0.1, &k, 0.1).unwrap().value, 0.0);
    }

    #[test]
    fn y_alpha_moment_matches_incomplete_gamma() {
        let k = RieszKernel::new(0.5, 64).unwrap();
        let (alpha, r) = (0.1, 0.1);
        let got = y_alpha_second_moment(alpha, &k, r).unwrap();
        let p = 1.0 - 2.0 * alpha;
        let mut oracle: f64 = k.q()[0] * r.powf(p) / p;
        for n in 1..=64 {
            let rate = 2.0 * PI * PI * (n * n) as f64;
            oracle += k.q()[n] * rate.powf(-p) * gamma_lr(p, rate * r) * gamma(p);
        }
        assert!(((got.value - got.tail) - oracle).abs() < 1e-9 * oracle);
        assert!(got.converged);
    }
}
