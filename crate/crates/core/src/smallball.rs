//! Grid events and small-ball probabilities `P(sup |u| <= eps)`.
//!
//! Two estimators are provided for `u_0 = 0` and constant `sigma`:
//!
//! * direct Monte Carlo over independent spectral paths, with exact binomial
//!   intervals; practical while `p` stays above roughly `1e-4`;
//! * fixed-level splitting in time: a population of particles is advanced one
//!   lattice step at a time, particles whose lattice sup exceeds `eps` are
//!   killed and the survivors are resampled back to full size. The product of
//!   per-step survival fractions is an unbiased estimate of `p`; independent
//!   replicates give its standard error.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::RieszKernel;
use crate::noise::{Lattice, LatticeSynth, OuTransition, SpectralState};
use crate::rng::RngSpec;
use crate::solver::{step_grid, LatticePath};
use crate::stats::{self, LineFit};

/// The space-time grid `t_i = i c0 eps^4`, `x_j = j eps^2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub epsilon: f64,
    pub gamma: f64,
    /// Temporal coefficient `C0`.
    pub big_c0: f64,
    /// `c0 = C0 eps^{(4 - 4 gamma)/gamma}`.
    pub c0: f64,
    /// `t1 = c0 eps^4`.
    pub t1: f64,
    /// `min { n : n eps^2 > 1 }`.
    pub n1: usize,
    pub horizon: f64,
    /// Non-fatal findings, e.g. a failed coefficient-control check.
    pub warnings: Vec<String>,
}

impl GridSpec {
    /// Grid positions `x_j`, `-n1 < j < n1`, with torus duplicates removed
    /// (`x = 1` is dropped when `-1` is present).
    pub fn positions(&self) -> Vec<f64> {
        let e2 = self.epsilon * self.epsilon;
        let top = self.n1 as i64 - 1;
        (-top..=top)
            .map(|j| (j as f64 * e2).clamp(-1.0, 1.0))
            .filter(|&x| !(x >= 1.0 - 1e-12 && top as f64 * e2 >= 1.0 - 1e-12 && x > 0.0))
            .collect()
    }

    /// Number of grid times `t_n <= horizon`, counting `t_0`.
    pub fn time_count(&self) -> usize {
        (self.horizon / self.t1 + 1e-9).floor() as usize + 1
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.t1
    }

    /// `t1^{(2 - gamma)/4}`, the threshold of `F_n`.
    pub fn f_threshold(&self) -> f64 {
        self.t1.powf((2.0 - self.gamma) / 4.0)
    }

    /// `eps^{2 - gamma}`, the threshold of `E_n`.
    pub fn e_threshold(&self) -> f64 {
        self.epsilon.powf(2.0 - self.gamma)
    }

    pub fn bracket(&self) -> (f64, f64) {
        exponent_bracket(self.gamma)
    }
}

/// `((2 gamma + 4)/(2 - gamma), (2 gamma + 4)/(gamma (2 - gamma)))`.
pub fn exponent_bracket(gamma: f64) -> (f64, f64) {
    let num = 2.0 * gamma + 4.0;
    (num / (2.0 - gamma), num / (gamma * (2.0 - gamma)))
}

pub fn make_grid(epsilon: f64, gamma: f64, big_c0: f64, horizon: f64) -> Result<GridSpec> {
    crate::kernel::check_gamma(gamma)?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if !(big_c0 > 0.0 && big_c0.is_finite()) {
        return Err(Error::domain(format!("C0 must be positive, got {big_c0}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
    }
    let c0 = big_c0 * epsilon.powf((4.0 - 4.0 * gamma) / gamma);
    let e2 = epsilon * epsilon;
    // The guard keeps 1/eps^2 = 100 from rounding down to 99.
    let n1 = (1.0 / e2 + 1e-9).floor() as usize + 1;
    let mut grid = GridSpec {
        epsilon,
        gamma,
        big_c0,
        c0,
        t1: c0 * e2 * e2,
        n1,
        horizon,
        warnings: Vec::new(),
    };
    match crate::analysis::eta::admissibility(&grid) {
        Ok(Some(w)) => grid.warnings.push(w),
        Ok(None) => {}
        Err(e) => grid.warnings.push(format!("coefficient control not checked: {e}")),
    }
    Ok(grid)
}

fn node_time(path: &LatticePath, t: f64) -> Result<usize> {
    let m = (t / path.dt).round();
    if t < -1e-12 || m as usize > path.steps {
        return Err(Error::Coverage(format!(
            "time {t} outside path horizon {}",
            path.horizon()
        )));
    }
    Ok(m as usize)
}

fn node_space(path: &LatticePath, x: f64) -> Result<usize> {
    if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&x) {
        return Err(Error::Coverage(format!("position {x} outside [-1, 1]")));
    }
    Ok(((x + 1.0) / path.dx).round() as usize % path.points)
}

/// `F_n`: `|u(t_n, x_j)| <= threshold` at every grid point; the default
/// threshold is `t1^{(2-gamma)/4}`. Values are read at the nearest lattice node.
pub fn event_f(path: &LatticePath, grid: &GridSpec, n: usize, threshold: Option<f64>) -> Result<bool> {
    let thr = threshold.unwrap_or_else(|| grid.f_threshold());
    let m = node_time(path, grid.time(n))?;
    for x in grid.positions() {
        let j = node_space(path, x)?;
        if path.u(m, j).abs() > thr {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `E_n`: `|u(t_{n+1}, .)| <= eps^{2-gamma}/3` and `|u| <= eps^{2-gamma}` on
/// `[t_n, t_{n+1}]`, over all lattice nodes of the slab.
pub fn event_e(path: &LatticePath, grid: &GridSpec, n: usize) -> Result<bool> {
    let thr = grid.e_threshold();
    let m0 = node_time(path, grid.time(n))?;
    let m1 = node_time(path, grid.time(n + 1))?;
    if path.row(m1).iter().any(|v| v.abs() > thr / 3.0) {
        return Ok(false);
    }
    Ok((m0..=m1).all(|m| path.row(m).iter().all(|v| v.abs() <= thr)))
}

/// Lattice and spectral resolution of a small-ball run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverConfig {
    pub gamma: f64,
    pub modes: usize,
    pub dx: f64,
    pub dt: f64,
    pub sigma: f64,
}

impl SolverConfig {
    /// `dx = 1/32`, `dt = dx^2`, `N = max(256, 4/dx)`, `sigma = 1`.
    pub fn default_for(gamma: f64) -> Self {
        let dx = 1.0 / 32.0;
        SolverConfig {
            gamma,
            modes: default_modes(dx),
            dx,
            dt: dx * dx,
            sigma: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        crate::kernel::check_gamma(self.gamma)?;
        Lattice::with_spacing(self.dx).map_err(|e| Error::Config(e.to_string()))?;
        if self.modes < 1 || !(self.dt > 0.0) || !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("invalid solver configuration {self:?}")));
        }
        Ok(())
    }
}

/// `max(256, 4/dx)` modes.
pub fn default_modes(dx: f64) -> usize {
    256usize.max((4.0 / dx).ceil() as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Direct,
    Splitting,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmallBallResult {
    pub gamma: f64,
    pub epsilon: f64,
    pub t: f64,
    pub dx: f64,
    pub dt: f64,
    pub modes: usize,
    pub method: Method,
    /// Direct: independent paths. Splitting: particles summed over replicates.
    pub trials: u64,
    /// Direct: paths with lattice sup `<= eps`. Splitting: survivors at this horizon, summed over replicates.
    pub hits: u64,
    pub p_hat: f64,
    /// `ln p_hat`, finite even when `p_hat` underflows.
    pub log_p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Standard error of `log p_hat` when available.
    pub log_se: Option<f64>,
    /// Zero hits: `ci_hi` is the rule-of-three bound `3/trials`.
    pub low_information: bool,
}

impl SmallBallResult {
    /// Fixed column order; `log_se` is empty when unavailable.
    pub fn csv_header() -> &'static str {
        "gamma,epsilon,T,dx,dt,modes,method,trials,hits,p_hat,log_p_hat,ci_lo,ci_hi,log_se"
    }

    pub fn csv_row(&self) -> String {
        let method = match self.method {
            Method::Direct => "direct",
            Method::Splitting => "splitting",
        };
        format!(
            "{},{},{},{},{},{},{method},{},{},{:.17e},{:.17e},{:.17e},{:.17e},{}",
            self.gamma,
            self.epsilon,
            self.t,
            self.dx,
            self.dt,
            self.modes,
            self.trials,
            self.hits,
            self.p_hat,
            self.log_p_hat,
            self.ci_lo,
            self.ci_hi,
            self.log_se.map(|v| format!("{v:.17e}")).unwrap_or_default()
        )
    }

    /// Inverse of [`csv_row`](Self::csv_row).
    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let cols: Vec<&str> = line.trim().split(',').collect();
        if cols.len() != 14 {
            return Err(Error::Config(format!("expected 14 columns, got {}: {line}", cols.len())));
        }
        let bad = |i: usize| Error::Config(format!("bad value {:?} in column {}", cols[i], i + 1));
        let f = |i: usize| cols[i].parse::<f64>().map_err(|_| bad(i));
        let u = |i: usize| cols[i].parse::<u64>().map_err(|_| bad(i));
        let method = match cols[6] {
            "direct" => Method::Direct,
            "splitting" => Method::Splitting,
            _ => return Err(bad(6)),
        };
        let hits = u(8)?;
        Ok(SmallBallResult {
            gamma: f(0)?,
            epsilon: f(1)?,
            t: f(2)?,
            dx: f(3)?,
            dt: f(4)?,
            modes: u(5)? as usize,
            method,
            trials: u(7)?,
            hits,
            p_hat: f(9)?,
            log_p_hat: f(10)?,
            ci_lo: f(11)?,
            ci_hi: f(12)?,
            log_se: if cols[13].is_empty() { None } else { Some(f(13)?) },
            low_information: hits == 0,
        })
    }

    /// Variance of `log p_hat` used as fit weight.
    pub fn log_variance(&self) -> Option<f64> {
        match (self.method, self.log_se) {
            (_, Some(se)) if se > 0.0 => Some(se * se),
            (Method::Direct, _) if self.hits > 0 && self.hits < self.trials => {
                let p = self.p_hat;
                Some((1.0 - p) / (self.trials as f64 * p))
            }
            _ => None,
        }
    }
}

/// Running lattice sup of `|u|` at each checkpoint step, for one path.
///
/// The simulation stops once the sup exceeds `cap`; later entries then hold
/// that value, which is enough to decide every event with threshold `<= cap`.
pub fn sup_profile(
    kernel: &Arc<RieszKernel>,
    cfg: &SolverConfig,
    checkpoints: &[usize],
    cap: f64,
    rng: RngSpec,
) -> Result<Vec<f64>> {
    let lattice = Lattice::with_spacing(cfg.dx)?;
    let tr = OuTransition::scaled(kernel, cfg.dt, cfg.sigma)?;
    let mut synth = LatticeSynth::new(lattice);
    let mut state = SpectralState::zero(kernel.clone());
    let mut row = vec![0.0; lattice.points];
    let mut g = rng.rng();
    let last = checkpoints.iter().copied().max().unwrap_or(0);
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut sup = 0.0f64;
    let mut next = 0;
    let mut sorted: Vec<(usize, usize)> = checkpoints.iter().copied().enumerate().map(|(i, s)| (s, i)).collect();
    sorted.sort_unstable();
    let mut vals = vec![0.0; checkpoints.len()];
    for step in 0..=last {
        if step > 0 && sup <= cap {
            state.advance(&tr, &mut g);
            synth.synthesize(&state.a, &state.b, &mut row);
            sup = row.iter().fold(sup, |m, v| m.max(v.abs()));
        }
        while next < sorted.len() && sorted[next].0 == step {
            vals[sorted[next].1] = sup;
            next += 1;
        }
    }
    out.extend(vals);
    Ok(out)
}

fn horizon_steps(ts: &[f64], dt: f64) -> Result<(Vec<usize>, f64)> {
    let t_max = ts.iter().copied().fold(0.0, f64::max);
    let (m, dt_used) = step_grid(t_max, dt)?;
    let steps = ts
        .iter()
        .map(|&t| {
            let s = (t / dt_used).round();
            if (s * dt_used - t).abs() > 1e-9 * t_max {
                Err(Error::Config(format!(
                    "horizon {t} is not a multiple of the time step {dt_used}"
                )))
            } else {
                Ok(s as usize)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    debug_assert_eq!(steps.iter().copied().max(), Some(m));
    Ok((steps, dt_used))
}

fn direct_result(
    cfg: &SolverConfig,
    dt: f64,
    epsilon: f64,
    t: f64,
    trials: u64,
    hits: u64,
) -> SmallBallResult {
    let p_hat = hits as f64 / trials as f64;
    let (ci_lo, ci_hi, low) = if hits == 0 {
        (0.0, (3.0 / trials as f64).min(1.0), true)
    } else {
        let (lo, hi) = stats::clopper_pearson(hits, trials, 0.95);
        (lo, hi, false)
    };
    SmallBallResult {
        gamma: cfg.gamma,
        epsilon,
        t,
        dx: cfg.dx,
        dt,
        modes: cfg.modes,
        method: Method::Direct,
        trials,
        hits,
        p_hat,
        log_p_hat: p_hat.ln(),
        ci_lo,
        ci_hi,
        log_se: None,
        low_information: low,
    }
}

/// Direct Monte Carlo on shared trials for every `(eps, T)` pair.
///
/// Trial `i` uses stream `rng.derive(i)` for all pairs, so hit counts are
/// pathwise monotone in both `eps` and `T`. Results are ordered by `T`, then `eps`.
pub fn estimate_small_ball_grid(
    epsilons: &[f64],
    ts: &[f64],
    trials: u64,
    cfg: &SolverConfig,
    rng: RngSpec,
) -> Result<Vec<SmallBallResult>> {
    cfg.validate()?;
    if trials == 0 || epsilons.is_empty() || ts.is_empty() {
        return Err(Error::Config("need trials >= 1 and at least one eps and T".into()));
    }
    if epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Config("eps must be positive".into()));
    }
    let kernel = Arc::new(RieszKernel::new(cfg.gamma, cfg.modes)?);
    let (steps, dt) = horizon_steps(ts, cfg.dt)?;
    let run_cfg = SolverConfig { dt, ..*cfg };
    let cap = epsilons.iter().copied().fold(0.0, f64::max);
    let profiles = (0..trials)
        .into_par_iter()
        .map(|i| sup_profile(&kernel, &run_cfg, &steps, cap, rng.derive(i)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for (k, &t) in ts.iter().enumerate() {
        for &eps in epsilons {
            let hits = profiles.iter().filter(|p| p[k] <= eps).count() as u64;
            out.push(direct_result(cfg, dt, eps, t, trials, hits));
        }
    }
    Ok(out)
}

/// Direct Monte Carlo estimate of `P(lattice sup_{[0,T]} |u| <= eps)`.
pub fn estimate_small_ball(
    epsilon: f64,
    t: f64,
    trials: u64,
    cfg: &SolverConfig,
    rng: RngSpec,
) -> Result<SmallBallResult> {
    if epsilon == f64::INFINITY {
        let (_, dt) = step_grid(t, cfg.dt)?;
        return Ok(direct_result(cfg, dt, epsilon, t, trials.max(1), trials.max(1)));
    }
    Ok(estimate_small_ball_grid(&[epsilon], &[t], trials, cfg, rng)?.remove(0))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplittingConfig {
    /// Particles per replicate.
    pub particles: usize,
    pub replicates: usize,
}

/// One splitting replicate: `log p_hat` and the survivor count at each
/// checkpoint step.
fn splitting_replicate(
    kernel: &Arc<RieszKernel>,
    cfg: &SolverConfig,
    epsilon: f64,
    checkpoints: &[usize],
    particles: usize,
    rng: RngSpec,
) -> Result<Vec<(f64, u64)>> {
    let lattice = Lattice::with_spacing(cfg.dx)?;
    let tr = OuTransition::scaled(kernel, cfg.dt, cfg.sigma)?;
    let last = checkpoints.iter().copied().max().unwrap_or(0);
    let mut pop: Vec<SpectralState> = (0..particles)
        .map(|_| SpectralState::zero(kernel.clone()))
        .collect();
    let mut log_p = 0.0;
    let mut out = vec![(f64::NEG_INFINITY, 0); checkpoints.len()];
    let record = |out: &mut Vec<(f64, u64)>, step: usize, v: (f64, u64)| {
        for (slot, &c) in out.iter_mut().zip(checkpoints) {
            if c == step {
                *slot = v;
            }
        }
    };
    record(&mut out, 0, (0.0, particles as u64));
    for step in 1..=last {
        let stage = rng.derive(step as u64);
        let alive: Vec<bool> = pop
            .par_iter_mut()
            .enumerate()
            .map_init(
                || (LatticeSynth::new(lattice), vec![0.0; lattice.points]),
                |(synth, row), (i, st)| {
                    st.advance(&tr, &mut stage.derive(i as u64).rng());
                    synth.synthesize(&st.a, &st.b, row);
                    row.iter().all(|v| v.abs() <= epsilon)
                },
            )
            .collect();
        let count = alive.iter().filter(|a| **a).count();
        if count == 0 {
            // Later checkpoints keep their initial (-inf, 0).
            record(&mut out, step, (f64::NEG_INFINITY, 0));
            break;
        }
        log_p += (count as f64 / particles as f64).ln();
        record(&mut out, step, (log_p, count as u64));
        if step < last && count < particles {
            pop = resample(&pop, &alive, particles, stage.derive(u64::MAX));
        }
    }
    Ok(out)
}

/// Systematic resampling of the live particles back to `size`.
fn resample(pop: &[SpectralState], alive: &[bool], size: usize, rng: RngSpec) -> Vec<SpectralState> {
    let live: Vec<usize> = (0..pop.len()).filter(|&i| alive[i]).collect();
    let step = live.len() as f64 / size as f64;
    let u: f64 = rng.rng().random::<f64>() * step;
    (0..size)
        .map(|k| {
            let idx = ((u + k as f64 * step) as usize).min(live.len() - 1);
            pop[live[idx]].clone()
        })
        .collect()
}

/// Splitting estimates of `P(lattice sup_{[0,T]} |u| <= eps)` for nested horizons.
///
/// `p_hat` is the mean of the replicate estimates; `log_se` is the delta-method
/// standard error of its logarithm and the interval is log-normal.
pub fn estimate_small_ball_splitting(
    epsilon: f64,
    ts: &[f64],
    split: &SplittingConfig,
    cfg: &SolverConfig,
    rng: RngSpec,
) -> Result<Vec<SmallBallResult>> {
    cfg.validate()?;
    if split.particles < 2 || split.replicates < 2 {
        return Err(Error::Config("splitting needs >= 2 particles and >= 2 replicates".into()));
    }
    if !(epsilon > 0.0) || ts.is_empty() {
        return Err(Error::Config("need eps > 0 and at least one horizon".into()));
    }
    let kernel = Arc::new(RieszKernel::new(cfg.gamma, cfg.modes)?);
    let (steps, dt) = horizon_steps(ts, cfg.dt)?;
    let run_cfg = SolverConfig { dt, ..*cfg };
    let reps = (0..split.replicates)
        .map(|r| splitting_replicate(&kernel, &run_cfg, epsilon, &steps, split.particles, rng.derive(r as u64)))
        .collect::<Result<Vec<_>>>()?;
    let z = stats::normal_quantile(0.975);
    let trials = (split.particles * split.replicates) as u64;
    let mut out = Vec::with_capacity(ts.len());
    for (k, &t) in ts.iter().enumerate() {
        // Scale by the largest replicate to keep tiny probabilities representable.
        let logs: Vec<f64> = reps.iter().map(|r| r[k].0).collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let hits: u64 = reps.iter().map(|r| r[k].1).sum();
        let result = if top == f64::NEG_INFINITY {
            SmallBallResult {
                gamma: cfg.gamma,
                epsilon,
                t,
                dx: cfg.dx,
                dt,
                modes: cfg.modes,
                method: Method::Splitting,
                trials,
                hits: 0,
                p_hat: 0.0,
                log_p_hat: f64::NEG_INFINITY,
                ci_lo: 0.0,
                ci_hi: (3.0 / split.particles as f64).min(1.0),
                log_se: None,
                low_information: true,
            }
        } else {
            let m: stats::Moments = logs.iter().map(|l| (l - top).exp()).collect();
            let log_p = top + m.mean.ln();
            let log_se = m.stderr() / m.mean;
            SmallBallResult {
                gamma: cfg.gamma,
                epsilon,
                t,
                dx: cfg.dx,
                dt,
                modes: cfg.modes,
                method: Method::Splitting,
                trials,
                hits,
                p_hat: log_p.exp(),
                log_p_hat: log_p,
                ci_lo: (log_p - z * log_se).exp(),
                ci_hi: (log_p + z * log_se).exp().min(1.0),
                log_se: Some(log_se),
                low_information: false,
            }
        };
        out.push(result);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExponentFit {
    pub gamma: f64,
    pub t: f64,
    pub theta_hat: f64,
    /// Intercept of the fitted line, in `log(-log p)`.
    pub intercept: f64,
    pub stderr: f64,
    /// `(upper-bound exponent, lower-bound exponent)`.
    pub bracket: (f64, f64),
    /// `[theta_hat - 2 stderr, theta_hat + 2 stderr]` meets the bracket.
    pub in_bracket: bool,
    pub points: usize,
    pub r_squared: f64,
}

/// Weighted least squares of `log(-log p_hat)` on `log eps`; slope `-theta`.
pub fn fit_exponent(results: &[SmallBallResult], gamma: f64) -> Result<ExponentFit> {
    let usable: Vec<&SmallBallResult> = results
        .iter()
        .filter(|r| r.log_p_hat.is_finite() && r.log_p_hat < 0.0 && r.epsilon.is_finite())
        .collect();
    let mut eps: Vec<f64> = usable.iter().map(|r| r.epsilon).collect();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    if eps.len() < 3 {
        return Err(Error::Fit(format!(
            "need >= 3 distinct eps with 0 < p_hat < 1, got {}",
            eps.len()
        )));
    }
    let t = usable[0].t;
    if usable.iter().any(|r| (r.t - t).abs() > 1e-12) {
        return Err(Error::Fit("exponent fit needs results at a single horizon".into()));
    }
    let xs: Vec<f64> = usable.iter().map(|r| r.epsilon.ln()).collect();
    let ys: Vec<f64> = usable.iter().map(|r| (-r.log_p_hat).ln()).collect();
    // Var(log(-log p)) = Var(log p) / (log p)^2.
    let ws: Vec<f64> = usable
        .iter()
        .map(|r| {
            let lp = r.log_p_hat;
            r.log_variance().map(|v| lp * lp / v).unwrap_or(1.0)
        })
        .collect();
    let all_weighted = usable.iter().all(|r| r.log_variance().is_some());
    let fit: LineFit = if all_weighted {
        stats::wls(&xs, &ys, &ws)?
    } else {
        stats::ols(&xs, &ys)?
    };
    let theta_hat = -fit.slope;
    let bracket = exponent_bracket(gamma);
    let lo = theta_hat - 2.0 * fit.slope_stderr;
    let hi = theta_hat + 2.0 * fit.slope_stderr;
    Ok(ExponentFit {
        gamma,
        t,
        theta_hat,
        intercept: fit.intercept,
        stderr: fit.slope_stderr,
        bracket,
        in_bracket: hi >= bracket.0 && lo <= bracket.1,
        points: usable.len(),
        r_squared: fit.r_squared,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateReport {
    pub epsilon: f64,
    pub ts: Vec<f64>,
    pub neg_log_p: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_positive: bool,
    /// `p_hat` non-increasing along the sorted horizons.
    pub monotone: bool,
}

/// Linear fit of `-log p_hat` against `T`.
pub fn rate_linearity(results: &[SmallBallResult]) -> Result<RateReport> {
    let mut rs: Vec<&SmallBallResult> = results.iter().collect();
    rs.sort_by(|a, b| a.t.total_cmp(&b.t));
    if rs.len() < 3 {
        return Err(Error::Fit(format!("need >= 3 horizons, got {}", rs.len())));
    }
    if rs.iter().any(|r| !r.log_p_hat.is_finite()) {
        return Err(Error::Fit("every horizon needs p_hat > 0".into()));
    }
    let ts: Vec<f64> = rs.iter().map(|r| r.t).collect();
    let ys: Vec<f64> = rs.iter().map(|r| -r.log_p_hat).collect();
    let fit = stats::ols(&ts, &ys)?;
    Ok(RateReport {
        epsilon: rs[0].epsilon,
        monotone: rs.windows(2).all(|w| w[1].log_p_hat <= w[0].log_p_hat),
        ts,
        neg_log_p: ys,
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        slope_positive: fit.slope > 0.0,
    })
}

/// Splitting run at nested horizons followed by [`rate_linearity`].
pub fn rate_linearity_in_t(
    epsilon: f64,
    ts: &[f64],
    split: &SplittingConfig,
    cfg: &SolverConfig,
    rng: RngSpec,
) -> Result<(Vec<SmallBallResult>, RateReport)> {
    let results = estimate_small_ball_splitting(epsilon, ts, split, cfg, rng)?;
    let report = rate_linearity(&results)?;
    Ok((results, report))
}

/// Small-ball probability of a Brownian motion with variance `v t` in
/// `[-a, a]` up to time `t`, by the eigenfunction series; used as a sanity
/// reference for the zero mode.
pub fn brownian_small_ball(v: f64, a: f64, t: f64) -> f64 {
    let mut acc = 0.0;
    for k in 0..200 {
        let m = (2 * k + 1) as f64;
        let term = 4.0 / (PI * m) * (-(m * m) * PI * PI * v * t / (8.0 * a * a)).exp();
        acc += if k % 2 == 0 { term } else { -term };
        if term < 1e-300 {
            break;
        }
    }
    acc.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{solve_constant_sigma, InitialData};

    fn path(eps_scale: f64, seed: u64) -> LatticePath {
        let k = Arc::new(RieszKernel::new(0.5, 64).unwrap());
        solve_constant_sigma(
            k,
            eps_scale,
            &InitialData::Zero,
            0.02,
            1.0 / 1024.0,
            Lattice::new(64).unwrap(),
            RngSpec::new(seed, 0),
        )
        .unwrap()
    }

    #[test]
    fn grid_examples() {
        assert_eq!(make_grid(0.1, 0.5, 0.1, 1.0).unwrap().n1, 101);
        let g = make_grid(0.2, 0.5, 0.1, 1.0).unwrap();
        assert!((g.c0 - 1.6e-4).abs() < 1e-18);
        let (a, b) = g.bracket();
        assert!((a - 10.0 / 3.0).abs() < 1e-14 && (b - 20.0 / 3.0).abs() < 1e-14);
        // x = +-1 coincide on the torus.
        let xs = g.positions();
        assert_eq!(xs.len(), 2 * 26 - 2);
        assert!(xs.iter().all(|x| (-1.0..1.0).contains(x)));
        assert!(make_grid(0.2, 1.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn grid_index_bounds() {
        for eps in [0.13, 0.2, 0.31, 0.45] {
            let g = make_grid(eps, 0.5, 1.0, 1.0).unwrap();
            let e2 = eps * eps;
            assert!(g.n1 as f64 * e2 > 1.0);
            assert!((g.n1 - 1) as f64 * e2 <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn zero_path_satisfies_events() {
        let mut p = path(1.0, 1);
        p.values.iter_mut().for_each(|v| *v = 0.0);
        let g = make_grid(0.3, 0.5, 50.0, 0.02).unwrap();
        assert!(event_f(&p, &g, 1, None).unwrap());
        assert!(event_e(&p, &g, 0).unwrap());
    }

    #[test]
    fn single_large_value_breaks_f() {
        let mut p = path(1.0, 1);
        p.values.iter_mut().for_each(|v| *v = 0.0);
        let g = make_grid(0.3, 0.5, 50.0, 0.02).unwrap();
        let m = (g.time(1) / p.dt).round() as usize;
        let j = ((0.09 + 1.0) / p.dx).round() as usize;
        let w = p.points + 1;
        p.values[m * w + j] = 2.0 * g.f_threshold();
        assert!(!event_f(&p, &g, 1, None).unwrap());
    }

    #[test]
    fn constant_half_threshold_breaks_e() {
        let mut p = path(1.0, 1);
        let g = make_grid(0.3, 0.5, 50.0, 0.02).unwrap();
        let c = g.e_threshold() / 2.0;
        p.values.iter_mut().for_each(|v| *v = c);
        assert!(!event_e(&p, &g, 0).unwrap());
    }

    #[test]
    fn event_outside_path_is_coverage_error() {
        let p = path(1.0, 1);
        let g = make_grid(0.3, 0.5, 50.0, 1.0).unwrap();
        let n = g.time_count() - 1;
        assert!(matches!(event_f(&p, &g, n, None), Err(Error::Coverage(_))));
    }

    #[test]
    fn infinite_ball_is_certain() {
        let cfg = SolverConfig::default_for(0.5);
        let r = estimate_small_ball(f64::INFINITY, 1.0, 10, &cfg, RngSpec::new(0, 0)).unwrap();
        assert_eq!(r.p_hat, 1.0);
    }

    #[test]
    fn zero_hits_flagged_with_rule_of_three() {
        let cfg = SolverConfig::default_for(0.5);
        let r = estimate_small_ball(1e-3, 0.05, 20, &cfg, RngSpec::new(0, 0)).unwrap();
        assert_eq!(r.hits, 0);
        assert!(r.low_information);
        assert_eq!(r.ci_lo, 0.0);
        assert!((r.ci_hi - 0.15).abs() < 1e-15);
    }

    #[test]
    fn doubling_sigma_never_adds_hits() {
        let mut cfg = SolverConfig::default_for(0.5);
        let one = estimate_small_ball(0.6, 0.05, 200, &cfg, RngSpec::new(3, 0)).unwrap();
        cfg.sigma = 2.0;
        let two = estimate_small_ball(0.6, 0.05, 200, &cfg, RngSpec::new(3, 0)).unwrap();
        assert!(two.hits <= one.hits);
        assert!(one.hits > 0);
    }

    #[test]
    fn shared_trials_are_monotone() {
        let cfg = SolverConfig::default_for(0.5);
        let eps = [0.5, 0.7, 0.9];
        let ts = [1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0];
        let rs = estimate_small_ball_grid(&eps, &ts, 200, &cfg, RngSpec::new(5, 0)).unwrap();
        for ti in 0..3 {
            for ei in 0..3 {
                let r = &rs[ti * 3 + ei];
                assert!(r.ci_lo <= r.p_hat && r.p_hat <= r.ci_hi);
                if ei > 0 {
                    assert!(r.hits >= rs[ti * 3 + ei - 1].hits);
                }
                if ti > 0 {
                    assert!(r.hits <= rs[(ti - 1) * 3 + ei].hits);
                }
            }
        }
    }

    fn synthetic(eps: f64, t: f64, log_p: f64) -> SmallBallResult {
        let p = log_p.exp();
        SmallBallResult {
            gamma: 0.5,
            epsilon: eps,
            t,
            dx: 0.0,
            dt: 0.0,
            modes: 0,
            method: Method::Splitting,
            trials: 1000,
            hits: 10,
            p_hat: p,
            log_p_hat: log_p,
            ci_lo: p,
            ci_hi: p,
            log_se: Some(0.1),
            low_information: false,
        }
    }

    #[test]
    fn synthetic_exponents_are_recovered() {
        let eps = [0.2, 0.25, 0.3, 0.35];
        let rs: Vec<_> = eps.iter().map(|&e| synthetic(e, 1.0, -e.powf(-3.0))).collect();
        let f = fit_exponent(&rs, 0.5).unwrap();
        assert!((f.theta_hat - 3.0).abs() < 1e-10);
        let rs: Vec<_> = eps
            .iter()
            .map(|&e| synthetic(e, 2.0, -2.0 * e.powf(-10.0 / 3.0)))
            .collect();
        let f = fit_exponent(&rs, 0.5).unwrap();
        assert!((f.theta_hat - 10.0 / 3.0).abs() < 1e-10);
        assert!(f.in_bracket);
        assert!(fit_exponent(&rs[..2], 0.5).is_err());
    }

    #[test]
    fn synthetic_product_law_rate() {
        let rho: f64 = 0.8;
        let rs: Vec<_> = [1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|&t| synthetic(0.3, t, t * rho.ln()))
            .collect();
        let rep = rate_linearity(&rs).unwrap();
        assert!((rep.slope + rho.ln()).abs() < 1e-12);
        assert!(rep.r_squared > 1.0 - 1e-12 && rep.monotone && rep.slope_positive);
    }

    #[test]
    fn brownian_reference_limits() {
        assert!((brownian_small_ball(1.0, 1.0, 0.01) - 1.0).abs() < 1e-9);
        assert!(brownian_small_ball(2.0, 0.35, 1.0) < 1e-8);
    }

    #[test]
    fn csv_rows_round_trip() {
        let mut r = synthetic(0.3, 1.0, -812.25);
        r.log_se = Some(0.125);
        let back = SmallBallResult::parse_csv_row(&r.csv_row()).unwrap();
        assert_eq!(back.csv_row(), r.csv_row());
        r.log_se = None;
        r.method = Method::Direct;
        let back = SmallBallResult::parse_csv_row(&r.csv_row()).unwrap();
        assert_eq!(back.log_se, None);
        assert_eq!(back.method, Method::Direct);
        assert!(SmallBallResult::parse_csv_row("1,2,3").is_err());
    }

}
