//! Spectral sampling of the colored noise and of the stochastic convolution.
//!
//! With unit diffusion coefficient the stochastic convolution is a random
//! Fourier series whose cosine and sine amplitudes are independent
//! Ornstein–Uhlenbeck processes,
//!
//! ```text
//! a_n(t) = sqrt(q_n) int_0^t exp(-pi^2 n^2 (t-s)) d beta_n(s),
//! ```
//!
//! and likewise `b_n` driven by an independent `beta~_n`. Each amplitude has an
//! exact Gaussian transition, so the sampler has no time-discretization bias.
//! Amplitudes carry the `sqrt(q_n)` factor; the field is
//! `sum_n a_n cos(n pi x) + b_n sin(n pi x)`.
//!
//! Random draws within a step are taken in mode order: `a_0`, then `a_n, b_n`
//! for `n = 1..=N`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::kernel::RieszKernel;
use crate::rng::RngSpec;

/// Variance of one amplitude after time `t` started from zero:
/// `q_n (1 - exp(-2 pi^2 n^2 t)) / (2 pi^2 n^2)`, and `q_0 t` for `n = 0`.
#[inline]
pub fn mode_variance(q_n: f64, n: usize, t: f64) -> f64 {
    if n == 0 {
        return q_n * t;
    }
    let rate = 2.0 * PI * PI * (n * n) as f64;
    q_n * (-(-rate * t).exp_m1()) / rate
}

/// Exact one-step transition of every amplitude over `dt`.
#[derive(Debug, Clone)]
pub struct OuTransition {
    dt: f64,
    decay: Vec<f64>,
    sd: Vec<f64>,
}

impl OuTransition {
    pub fn new(kernel: &RieszKernel, dt: f64) -> Result<Self> {
        OuTransition::scaled(kernel, dt, 1.0)
    }

    /// Transition for the noise multiplied by a constant `sigma`.
    pub fn scaled(kernel: &RieszKernel, dt: f64, sigma: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::domain(format!("time step must be positive, got {dt}")));
        }
        let (decay, sd) = kernel
            .q()
            .iter()
            .enumerate()
            .map(|(n, &q)| {
                let decay = (-PI * PI * (n * n) as f64 * dt).exp();
                (decay, sigma * mode_variance(q, n, dt).sqrt())
            })
            .unzip();
        Ok(OuTransition { dt, decay, sd })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn modes(&self) -> usize {
        self.decay.len() - 1
    }
}

/// Cosine/sine amplitudes of the field at time `t`.
#[derive(Debug, Clone)]
pub struct SpectralState {
    pub t: f64,
    /// Cosine amplitudes, `n = 0..=N`.
    pub a: Vec<f64>,
    /// Sine amplitudes, `n = 0..=N`; `b[0]` is always zero.
    pub b: Vec<f64>,
    kernel: Arc<RieszKernel>,
}

impl SpectralState {
    pub fn zero(kernel: Arc<RieszKernel>) -> Self {
        let len = kernel.mode_count() + 1;
        SpectralState {
            t: 0.0,
            a: vec![0.0; len],
            b: vec![0.0; len],
            kernel,
        }
    }

    /// State with given amplitudes at `t = 0`; shorter inputs are zero-padded.
    pub fn from_amplitudes(kernel: Arc<RieszKernel>, a: &[f64], b: &[f64]) -> Result<Self> {
        let len = kernel.mode_count() + 1;
        if a.len() > len || b.len() > len {
            return Err(Error::domain(format!(
                "initial data has more than {len} modes"
            )));
        }
        let mut state = SpectralState::zero(kernel);
        state.a[..a.len()].copy_from_slice(a);
        state.b[..b.len()].copy_from_slice(b);
        state.b[0] = 0.0;
        state.check_finite()?;
        Ok(state)
    }

    pub fn kernel(&self) -> &Arc<RieszKernel> {
        &self.kernel
    }

    pub fn modes(&self) -> usize {
        self.a.len() - 1
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.t.is_finite() && self.a.iter().chain(&self.b).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::numeric("spectral state has non-finite entries"))
        }
    }

    /// One exact transition over `dt` drawing from `rng`.
    pub fn ou_step<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> Result<()> {
        self.check_finite()?;
        let tr = OuTransition::new(&self.kernel, dt)?;
        self.advance(&tr, rng);
        Ok(())
    }

    /// Hot-path transition with a precomputed [`OuTransition`].
    #[inline]
    pub fn advance<R: Rng + ?Sized>(&mut self, tr: &OuTransition, rng: &mut R) {
        debug_assert_eq!(tr.decay.len(), self.a.len());
        let z: f64 = rng.sample(StandardNormal);
        self.a[0] += tr.sd[0] * z;
        for n in 1..self.a.len() {
            let za: f64 = rng.sample(StandardNormal);
            let zb: f64 = rng.sample(StandardNormal);
            self.a[n] = tr.decay[n] * self.a[n] + tr.sd[n] * za;
            self.b[n] = tr.decay[n] * self.b[n] + tr.sd[n] * zb;
        }
        self.t += tr.dt;
    }

    /// Deterministic heat-flow decay of every amplitude over `dt` (no noise).
    pub fn decay(&mut self, dt: f64) {
        for n in 1..self.a.len() {
            let d = (-PI * PI * (n * n) as f64 * dt).exp();
            self.a[n] *= d;
            self.b[n] *= d;
        }
        self.t += dt;
    }

    pub fn evaluate(&self, xs: &[f64]) -> Result<Vec<f64>> {
        self.check_finite()?;
        Ok(xs.iter().map(|&x| field_at(&self.a, &self.b, x)).collect())
    }
}

/// Functional form of [`SpectralState::ou_step`] drawing from a fresh stream.
pub fn ou_step(mut state: SpectralState, dt: f64, rng: RngSpec) -> Result<SpectralState> {
    let mut g = rng.rng();
    state.ou_step(dt, &mut g)?;
    Ok(state)
}

/// `sum_n a_n cos(n pi x) + b_n sin(n pi x)`.
pub fn evaluate_field(state: &SpectralState, xs: &[f64]) -> Result<Vec<f64>> {
    state.evaluate(xs)
}

/// Series evaluation with the angle-addition recurrence.
pub fn field_at(a: &[f64], b: &[f64], x: f64) -> f64 {
    let theta = PI * x;
    let (s1, c1) = theta.sin_cos();
    let (mut c, mut s) = (1.0, 0.0);
    let mut acc = a[0];
    for n in 1..a.len() {
        let cn = c * c1 - s * s1;
        s = s * c1 + c * s1;
        c = cn;
        // Re-anchor periodically to bound recurrence drift.
        if n % 64 == 0 {
            let (sn, cn) = (theta * n as f64).sin_cos();
            s = sn;
            c = cn;
        }
        acc += a[n] * c + b[n] * s;
    }
    acc
}

/// Uniform lattice `x_j = -1 + j * 2/J`, `j = 0..J`, on the torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lattice {
    pub points: usize,
}

impl Lattice {
    pub fn new(points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::domain("lattice needs at least 2 points"));
        }
        Ok(Lattice { points })
    }

    /// Lattice with spacing `dx`; `2/dx` must be an integer.
    pub fn with_spacing(dx: f64) -> Result<Self> {
        let j = 2.0 / dx;
        let jr = j.round();
        if !(dx > 0.0) || (j - jr).abs() > 1e-9 * j || jr < 2.0 {
            return Err(Error::domain(format!(
                "dx = {dx} does not divide the torus length 2"
            )));
        }
        Lattice::new(jr as usize)
    }

    pub fn dx(&self) -> f64 {
        2.0 / self.points as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        -1.0 + j as f64 * self.dx()
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.points).map(|j| self.x(j)).collect()
    }
}

/// FFT synthesis of the field on a uniform lattice.
///
/// With `x_j = -1 + 2j/J`, `exp(i n pi x_j) = (-1)^n exp(2 pi i n j / J)`, so the
/// field is the real part of an inverse DFT of the folded spectrum
/// `C_k = sum_{n = k mod J} (-1)^n (a_n - i b_n)`.
#[derive(Clone)]
pub struct LatticeSynth {
    lattice: Lattice,
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl std::fmt::Debug for LatticeSynth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LatticeSynth")
            .field("lattice", &self.lattice)
            .finish()
    }
}

impl LatticeSynth {
    pub fn new(lattice: Lattice) -> Self {
        let fft = FftPlanner::new().plan_fft_inverse(lattice.points);
        let scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        LatticeSynth {
            lattice,
            fft,
            buf: vec![Complex64::default(); lattice.points],
            scratch,
        }
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    /// Field values at the `J` lattice points.
    pub fn synthesize(&mut self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let j = self.lattice.points;
        debug_assert_eq!(out.len(), j);
        self.buf.fill(Complex64::default());
        for n in 0..a.len() {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            self.buf[n % j] += Complex64::new(sign * a[n], -sign * b[n]);
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        for (o, c) in out.iter_mut().zip(&self.buf) {
            *o = c.re;
        }
    }
}

/// Generator of lattice noise increments `Delta F_j` over a time step.
#[derive(Debug, Clone)]
pub struct NoiseIncrements {
    synth: LatticeSynth,
    sd: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl NoiseIncrements {
    pub fn new(kernel: &RieszKernel, lattice: Lattice, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::domain(format!("time step must be positive, got {dt}")));
        }
        let sd = kernel.q().iter().map(|q| (q * dt).sqrt()).collect::<Vec<_>>();
        let len = sd.len();
        Ok(NoiseIncrements {
            synth: LatticeSynth::new(lattice),
            sd,
            a: vec![0.0; len],
            b: vec![0.0; len],
        })
    }

    /// `sqrt(dt) [sqrt(q_0) xi_0 + sum_n sqrt(q_n)(cos(n pi x_j) xi_n + sin(n pi x_j) xi~_n)]`.
    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut [f64]) {
        let z: f64 = rng.sample(StandardNormal);
        self.a[0] = self.sd[0] * z;
        for n in 1..self.sd.len() {
            let za: f64 = rng.sample(StandardNormal);
            let zb: f64 = rng.sample(StandardNormal);
            self.a[n] = self.sd[n] * za;
            self.b[n] = self.sd[n] * zb;
        }
        self.synth.synthesize(&self.a, &self.b, out);
    }
}

/// One increment of the colored noise on `lattice` over `dt`.
pub fn lattice_noise_increment(
    kernel: &RieszKernel,
    lattice: Lattice,
    dt: f64,
    rng: RngSpec,
) -> Result<Vec<f64>> {
    let mut gen = NoiseIncrements::new(kernel, lattice, dt)?;
    let mut out = vec![0.0; lattice.points];
    gen.draw(&mut rng.rng(), &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(modes: usize) -> Arc<RieszKernel> {
        Arc::new(RieszKernel::new(0.5, modes).unwrap())
    }

    #[test]
    fn zero_noise_keeps_zero_state() {
        let k = Arc::new(RieszKernel::zero(0.5, 16).unwrap());
        let s = ou_step(SpectralState::zero(k), 0.1, RngSpec::new(1, 0)).unwrap();
        assert!(s.a.iter().chain(&s.b).all(|v| *v == 0.0));
        assert!((s.t - 0.1).abs() < 1e-15);
    }

    #[test]
    fn constant_mode_gives_constant_field() {
        let mut s = SpectralState::zero(kernel(8));
        s.a[0] = 0.75;
        let v = evaluate_field(&s, &[-1.0, -0.3, 0.0, 0.6]).unwrap();
        assert!(v.iter().all(|u| *u == 0.75));
    }

    #[test]
    fn first_cosine_mode_vanishes_at_half() {
        let mut s = SpectralState::zero(kernel(8));
        s.a[1] = 1.0;
        let v = evaluate_field(&s, &[0.5]).unwrap();
        assert!(v[0].abs() < 1e-15);
    }

    #[test]
    fn cosine_only_field_is_even() {
        let mut s = SpectralState::zero(kernel(64));
        for n in 0..=64 {
            s.a[n] = ((n * 7 % 11) as f64 - 5.0) / (1.0 + n as f64);
        }
        for x in [0.1, 0.37, 0.8] {
            let v = evaluate_field(&s, &[x, -x]).unwrap();
            assert!((v[0] - v[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let mut s = SpectralState::zero(kernel(4));
        s.a[2] = f64::NAN;
        assert!(matches!(
            ou_step(s.clone(), 0.1, RngSpec::new(0, 0)),
            Err(Error::Numeric(_))
        ));
        assert!(evaluate_field(&s, &[0.0]).is_err());
        assert!(ou_step(SpectralState::zero(kernel(4)), 0.0, RngSpec::new(0, 0)).is_err());
    }

    #[test]
    fn fft_synthesis_matches_direct_series() {
        let k = kernel(200);
        let mut s = SpectralState::zero(k);
        let mut g = RngSpec::new(3, 1).rng();
        s.ou_step(0.01, &mut g).unwrap();
        let lattice = Lattice::new(64).unwrap();
        let direct = s.evaluate(&lattice.positions()).unwrap();
        let mut out = vec![0.0; 64];
        LatticeSynth::new(lattice).synthesize(&s.a, &s.b, &mut out);
        for (d, f) in direct.iter().zip(&out) {
            assert!((d - f).abs() < 1e-12, "{d} vs {f}");
        }
    }

    #[test]
    fn lattice_spacing_must_divide_torus() {
        assert!(Lattice::with_spacing(0.3).is_err());
        assert_eq!(Lattice::with_spacing(1.0 / 32.0).unwrap().points, 64);
    }

    #[test]
    fn identical_spec_identical_increment() {
        let k = kernel(32);
        let l = Lattice::new(16).unwrap();
        let a = lattice_noise_increment(&k, l, 1e-3, RngSpec::new(5, 9)).unwrap();
        let b = lattice_noise_increment(&k, l, 1e-3, RngSpec::new(5, 9)).unwrap();
        assert_eq!(a, b);
        let c = lattice_noise_increment(&k, l, 1e-3, RngSpec::new(5, 10)).unwrap();
        assert_ne!(a, c);
    }
}
