//! One function per subcommand. Each reads its parameters, writes its files
//! and returns the checks it evaluated.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde_json::{json, Value};

use shelab::analysis::correlation::{gaussian_correlation_spotcheck, random_case, SymmetricBox};
use shelab::analysis::eta::{eta_report, eta_sweep};
use shelab::analysis::heat_integrals::holder_quadrature;
use shelab::analysis::regularity::{default_lags, log_lags, regularity_scan, Direction};
use shelab::analysis::scaling::{lattice_variance_check, variance_scaling};
use shelab::analysis::tails::{beta_scaling, increment_tail_check, PatchSpec, SpaceTimePoint, TailLevel};
use shelab::kernel::{kernel_check, RieszKernel};
use shelab::noise::Lattice;
use shelab::smallball::{
    default_modes, estimate_small_ball_grid, estimate_small_ball_splitting, fit_exponent, rate_linearity,
    SmallBallResult, SolverConfig, SplittingConfig,
};
use shelab::solver::{factorization_study, solve_constant_sigma, solve_general, InitialData, SigmaSpec};
use shelab::stats;
use shelab::RngSpec;

use crate::error::CliError;
use crate::output::{Check, Output};
use crate::params::{param, ParamDef, Params};
use crate::svg::{self, Series};

type Run = fn(&Params, &Output) -> Result<Vec<Check>, CliError>;

pub struct Spec {
    pub name: &'static str,
    pub about: &'static str,
    pub params: &'static [ParamDef],
    pub run: Run,
}

pub const COMMANDS: &[Spec] = &[
    Spec {
        name: "kernel-check",
        about: "Heat-kernel identities and Riesz coefficient properties",
        params: &[
            param("gamma", "0.25,0.5,0.75", "Riesz exponents"),
            param("modes", "4096", "coefficient table size"),
        ],
        run: kernel_check_cmd,
    },
    Spec {
        name: "simulate",
        about: "One sample path on a lattice",
        params: &[
            param("gamma", "0.5", "Riesz exponent"),
            param("T", "0.01", "horizon"),
            param("dx", "0.03125", "lattice spacing; 2/dx must be an integer"),
            param("dt", "0", "time step; 0 picks dx^2/4"),
            param("modes", "0", "noise modes; 0 picks max(256, 4/dx)"),
            param("sigma", "1", "a constant, or `sine` for 1 + sin(u)/2"),
            param("method", "spectral", "`spectral` (constant sigma, exact) or `lattice` (finite differences)"),
        ],
        run: simulate_cmd,
    },
    Spec {
        name: "smallball",
        about: "Small-ball probabilities, exponent fit and rate in T",
        params: &[
            param("gamma", "0.5", "Riesz exponent"),
            param("eps", "0.35,0.3,0.25,0.2", "ball radii"),
            param("T", "1", "horizons for every radius"),
            param("rate_eps", "0.35", "radii that also run the rate_T horizons"),
            param("rate_T", "0.5,1,2", "horizons for the rate-in-T fit"),
            param("fit_T", "1", "horizon of the exponent fit"),
            param("trials", "20000", "paths per radius (splitting: particles x replicates)"),
            param("method", "splitting", "`splitting` or `direct`"),
            param("replicates", "8", "independent splitting runs"),
            param("dx", "0.03125", "lattice spacing of the sup"),
            param("dt", "0", "time step; 0 picks dx^2"),
            param("modes", "0", "noise modes; 0 picks max(256, 4/dx)"),
            param("sigma", "1", "constant diffusion coefficient"),
        ],
        run: smallball_cmd,
    },
    Spec {
        name: "exponent-fit",
        about: "Exponent fit from small-ball CSV files",
        params: &[
            param("in", "", "comma-separated result CSVs written by smallball"),
            param("gamma", "0.5", "Riesz exponent of the bracket"),
            param("fit_T", "1", "horizon of the exponent fit"),
        ],
        run: exponent_fit_cmd,
    },
    Spec {
        name: "variance",
        about: "Variance and covariance scaling, Monte Carlo and lattice cross-checks",
        params: &[
            param("gamma", "0.5", "Riesz exponent"),
            param("modes", "1024", "noise modes"),
            param("trials", "10000", "Monte Carlo trials per comparison"),
            param("t", "0.001", "time of the lattice comparison"),
            param("dx", "0.015625", "lattice spacing of the lattice comparison"),
            param("dt", "0", "lattice time step; 0 picks dx^2/4"),
        ],
        run: variance_cmd,
    },
    Spec {
        name: "regularity",
        about: "Mean-square increment slopes and heat-kernel integral exponents",
        params: &[
            param("gamma", "0.5", "Riesz exponent"),
            param("modes", "1024", "noise modes"),
            param("trials", "10000", "Monte Carlo trials"),
            param("t", "0.1", "base time"),
            param("x", "0", "base position"),
            param("direction", "space,time", "directions to scan"),
            param("space_lags", "", "space lags; empty picks 8 in [2e-3, 0.1]"),
            param("time_lags", "", "time lags; empty picks 8 in [1e-6, 1e-3]"),
            param("alpha", "0.3", "heat-integral exponent alpha"),
            param("xi", "0.5", "space exponent, in (0, 2 alpha)"),
            param("zeta", "0.25", "time exponent, in (0, alpha)"),
            param("quadrature", "true", "also run the heat-kernel integrals"),
        ],
        run: regularity_cmd,
    },
    Spec {
        name: "tails",
        about: "Increment and patch-sup tails against Gaussian envelopes",
        params: &[
            param("gamma", "0.5", "Riesz exponent"),
            param("modes", "1024", "noise modes"),
            param("trials", "10000", "Monte Carlo trials per run"),
            param("t", "0.5", "time of the increment"),
            param("x", "0", "left end of the increment"),
            param("sep", "0.1", "spatial separation of the increment"),
            param("z", "0.5,1,1.5,2,2.5,3,3.5", "increment thresholds in standard deviations"),
            param("eps", "0.2", "patch scale"),
            param("beta", "1", "patch duration beta eps^4"),
            param("factor", "2", "beta multiplier of the scaling check"),
        ],
        run: tails_cmd,
    },
    Spec {
        name: "eta",
        about: "Regression coefficients over a C0 sweep and correlation spot-checks",
        params: &[
            param("gamma", "0.5", "Riesz exponent"),
            param("eps", "0.2", "grid scale"),
            param("C0", "1e-7,1e-6,1e-5,1e-4,1e-3,0.01,0.1,1", "temporal coefficients to sweep"),
            param("modes", "2048", "coefficient table size"),
            param("pairs", "10", "random box pairs"),
            param("max_dim", "8", "largest dimension of the random pairs"),
            param("corr_trials", "20000", "Monte Carlo trials per pair"),
            param("grid_C0", "1e-4", "C0 of the grid-covariance spot-check"),
        ],
        run: eta_cmd,
    },
    Spec {
        name: "factorize",
        about: "Per-mode factorization identity under step refinement",
        params: &[
            param("alpha", "0.2", "factorization exponent"),
            param("gamma", "0.5", "Riesz exponent (bounds alpha)"),
            param("modes", "0,1,2,3,4", "Fourier modes"),
            param("T", "0.05", "horizon"),
            param("dt", "1e-5", "finest step"),
            param("factor", "5", "refinement factor between levels"),
            param("levels", "4", "refinement levels ending at dt"),
            param("paths", "16", "Brownian paths per mode"),
        ],
        run: factorize_cmd,
    },
];

pub fn find(name: &str) -> Option<&'static Spec> {
    COMMANDS.iter().find(|c| c.name == name)
}

fn rng(p: &Params) -> Result<RngSpec, CliError> {
    Ok(RngSpec::new(p.get("seed")?, 0))
}

fn want_svg(p: &Params) -> Result<bool, CliError> {
    p.flag("svg")
}

fn kernel(gamma: f64, modes: usize) -> Result<Arc<RieszKernel>, CliError> {
    Ok(Arc::new(RieszKernel::new(gamma, modes)?))
}

fn sci(v: f64) -> String {
    format!("{v:.3e}")
}

fn kernel_check_cmd(p: &Params, out: &Output) -> Result<Vec<Check>, CliError> {
    let gammas: Vec<f64> = p.list("gamma")?;
    let modes: usize = p.get("modes")?;
    if gammas.is_empty() {
        return Err(CliError::config("--gamma needs at least one value"));
    }
    let mut checks = Vec::new();
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for (i, &g) in gammas.iter().enumerate() {
        let c = kernel_check(g, modes)?;
        if i == 0 {
            checks.push(Check::new(
                "dual-series agreement",
                c.dual_series_ok(),
                format!("max |images - spectral| = {} on a 50x50 grid (< 1e-10)", sci(c.dual_series_max_diff)),
            ));
            checks.push(Check::new("unit mass", c.mass_ok(), format!("max error {} (< 1e-10)", sci(c.mass_max_error))));
            checks.push(Check::new(
                "semigroup",
                c.semigroup_ok(),
                format!("max error {} (< 1e-8)", sci(c.semigroup_max_error)),
            ));
        }
        checks.push(Check::new(
            format!("coefficients non-negative gamma={g}"),
            c.coefficients_nonnegative,
            format!("q_0..q_{modes}"),
        ));
        checks.push(Check::new(
            format!("coefficient slope gamma={g}"),
            c.slope_ok(),
            format!("slope {:.5} over [16, {modes}], expected {} +- 0.02", c.slope, g - 1.0),
        ));
        checks.push(Check::new(
            format!("asymptotic ratio gamma={g}"),
            (c.asymptotic_ratio - 1.0).abs() <= 0.01,
            format!("q_n / (A n^(gamma-1)) = {:.6} at n = {}", c.asymptotic_ratio, modes.min(1024)),
        ));
        checks.push(Check::new(
            format!("Cesaro mean gamma={g}"),
            c.cesaro_error <= 0.01,
            format!("error {} at r = 0.5 (<= 0.01)", sci(c.cesaro_error)),
        ));
        let k = RieszKernel::new(g, modes)?;
        let amp = k.amplitude();
        let mut pts = Vec::new();
        for n in 1..=modes {
            let q = k.q()[n];
            rows.push(format!("{g},{n},{q:.17e},{:.17e}", amp * (n as f64).powf(g - 1.0)));
            pts.push((n as f64, q));
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts[15..].iter().map(|(n, q)| (n.ln(), q.ln())).unzip();
        let fit = stats::ols(&xs, &ys)?;
        series.push(Series {
            label: format!("gamma = {g}"),
            points: pts,
            fit: Some((fit.slope, fit.intercept)),
        });
        reports.push(c);
    }
    out.csv("coefficients.csv", "gamma,n,q,asymptote", rows)?;
    if want_svg(p)? {
        out.text("coefficients.svg", &svg::loglog("Riesz coefficients", "n", "q_n", &series))?;
    }
    out.summary(p, &checks, &reports)?;
    Ok(checks)
}

fn sigma_spec(raw: &str) -> Result<SigmaSpec, CliError> {
    if raw == "sine" {
        return Ok(SigmaSpec::function(|_, _, u| 1.0 + 0.5 * u.sin(), 0.5, 1.5, 0.5)?);
    }
    let v: f64 = raw
        .parse()
        .map_err(|_| CliError::config(format!("--sigma must be a number or `sine`, got {raw:?}")))?;
    Ok(SigmaSpec::constant(v)?)
}

fn modes_for(p: &Params, dx: f64) -> Result<usize, CliError> {
    let m: usize = p.get("modes")?;
    Ok(if m == 0 { default_modes(dx) } else { m })
}

fn simulate_cmd(p: &Params, out: &Output) -> Result<Vec<Check>, CliError> {
    let gamma: f64 = p.get("gamma")?;
    let t_end: f64 = p.get("T")?;
    let dx: f64 = p.get("dx")?;
    let dt = match p.get::<f64>("dt")? {
        d if d == 0.0 => dx * dx / 4.0,
        d => d,
    };
    let lattice = Lattice::with_spacing(dx)?;
    let k = kernel(gamma, modes_for(p, dx)?)?;
    let sigma = sigma_spec(p.str("sigma"))?;
    let path = match p.str("method") {
        "spectral" => {
            let Some(c) = sigma.constant_value() else {
                return Err(CliError::config("spectral method needs a constant --sigma"));
            };
            solve_constant_sigma(k, c, &InitialData::Zero, t_end, dt, lattice, rng(p)?)?
        }
        "lattice" => solve_general(&k, &sigma, &vec![0.0; lattice.points], t_end, dt, lattice, rng(p)?)?,
        other => return Err(CliError::config(format!("unknown --method {other:?}"))),
    };
    let mut buf = Vec::new();
    path.write_csv(&mut buf)?;
    out.text("path.csv", &String::from_utf8_lossy(&buf))?;
    let report = json!({
        "steps": path.steps,
        "dt": path.dt,
        "dx": path.dx,
        "points": path.points,
        "sup_abs": path.sup_abs(),
    });
    out.summary(p, &[], &report)?;
    Ok(Vec::new())
}

fn contains(list: &[f64], v: f64) -> bool {
    list.iter().any(|x| (x - v).abs() <= 1e-12 * v.abs().max(1.0))
}

fn sorted_union(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = a.iter().chain(b).copied().collect();
    v.sort_by(f64::total_cmp);
    v.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * y.abs().max(1.0));
    v
}

fn smallball_cmd(p: &Params, out: &Output) -> Result<Vec<Check>, CliError> {
    let gamma: f64 = p.get("gamma")?;
    let eps: Vec<f64> = p.list("eps")?;
    let ts: Vec<f64> = p.list("T")?;
    let rate_eps: Vec<f64> = p.list("rate_eps")?;
    let rate_ts: Vec<f64> = p.list("rate_T")?;
    let trials: u64 = p.get("trials")?;
    let dx: f64 = p.get("dx")?;
    let dt = match p.get::<f64>("dt")? {
        d if d == 0.0 => dx * dx,
        d => d,
    };
    if eps.is_empty() || ts.is_empty() {
        return Err(CliError::config("need at least one --eps and one --T"));
    }
    let cfg = SolverConfig {
        gamma,
        modes: modes_for(p, dx)?,
        dx,
        dt,
        sigma: p.get("sigma")?,
    };
    let horizons = |e: f64| {
        if contains(&rate_eps, e) {
            sorted_union(&ts, &rate_ts)
        } else {
            sorted_union(&ts, &[])
        }
    };
    let seed = rng(p)?;
    let mut results = match p.str("method") {
        "splitting" => {
            let replicates: usize = p.get("replicates")?;
            if replicates == 0 || trials % replicates as u64 != 0 {
                return Err(CliError::config(format!(
                    "--trials {trials} must be a multiple of --replicates {replicates}"
                )));
            }
            let split = SplittingConfig {
                particles: (trials / replicates as u64) as usize,
                replicates,
            };
            let mut all = Vec::new();
            for (i, &e) in eps.iter().enumerate() {
                all.extend(estimate_small_ball_splitting(e, &horizons(e), &split, &cfg, seed.derive(i as u64))?);
            }
            all
        }
        "direct" => {
            let every = eps.iter().fold(Vec::new(), |acc, &e| sorted_union(&acc, &horizons(e)));
            let mut rs = estimate_small_ball_grid(&eps, &every, trials, &cfg, seed)?;
            rs.retain(|r| contains(&horizons(r.epsilon), r.t));
            rs
        }
        other => return Err(CliError::config(format!("unknown --method {other:?}"))),
    };
    results.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.epsilon.total_cmp(&b.epsilon)));
    out.csv("results.csv", SmallBallResult::csv_header(), results.iter().map(|r| r.csv_row()))?;
    analyze_smallball(p, out, &results, gamma, p.get("fit_T")?)
}

fn exponent_fit_cmd(p: &Params, out: &Output) -> Result<Vec<Check>, CliError> {
    let files: Vec<String> = p.list("in")?;
    if files.is_empty() {
        return Err(CliError::config("--in needs at least one CSV file"));
    }
    let mut results = Vec::new();
    for f in &files {
        let text = std::fs::read_to_string(f).map_err(|e| CliError::config(format!("cannot read {f}: {e}")))?;
        for line in text.lines() {
            if line.trim().is_empty() || line.starts_with("gamma,") {
                continue;
            }
            results.push(SmallBallResult::parse_csv_row(line)?);
        }
    }
    let mut rows: Vec<String> = results
        .iter()
        .map(|r| {
            let se = r.log_se.map(|v| format!("{v:.17e}")).unwrap_or_default();
            format!("{},{},{:.17e},{se}", r.epsilon, r.t, -r.log_p_hat)
        })
        .collect();
    rows.sort();
    out.csv("fit_points.csv", "epsilon,T,neg_log_p,log_se", rows)?;
    analyze_smallball(p, out, &results, p.get("gamma")?, p.get("fit_T")?)
}

/// Exponent fit, rate in `T` and monotonicity checks shared by `smallball`
/// and `exponent-fit`.
fn analyze_smallball(
    p: &Params,
    out: &Output,
    results: &[SmallBallResult],
    gamma: f64,
    fit_t: f64,
) -> Result<Vec<Check>, CliError> {
    let mut checks = Vec::new();
    let at_fit: Vec<SmallBallResult> = results.iter().filter(|r| contains(&[fit_t], r.t)).cloned().collect();
    let fit = match fit_exponent(&at_fit, gamma) {
        Ok(f) => {
            let (lo, hi) = (f.theta_hat - 2.0 * f.stderr, f.theta_hat + 2.0 * f.stderr);
            checks.push(Check::new(
                "exponent bracket",
                f.in_bracket,
                format!(
                    "theta_hat = {:.4} +- 2 x {:.4} = [{lo:.4}, {hi:.4}] vs bracket [{:.4}, {:.4}] from {} radii at T = {fit_t}",
                    f.theta_hat, f.stderr, f.bracket.0, f.bracket.1, f.points
                ),
            ));
            Some(f)
        }
        Err(shelab::Error::Fit(msg)) => {
            eprintln!("note: no exponent fit at T = {fit_t}: {msg}");
            None
        }
        Err(e) => return Err(e.into()),
    };

    let mut eps: Vec<f64> = results.iter().map(|r| r.epsilon).collect();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    let mut ts: Vec<f64> = results.iter().map(|r| r.t).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();

    let mut rates = Vec::new();
    for &e in &eps {
        let rs: Vec<SmallBallResult> = results.iter().filter(|r| r.epsilon == e).cloned().collect();
        if rs.len() < 3 {
            continue;
        }
        match rate_linearity(&rs) {
            Ok(rep) => {
                checks.push(Check::new(
                    format!("rate linear in T eps={e}"),
                    rep.r_squared >= 0.95 && rep.slope_positive,
                    format!(
                        "-log p_hat = {:.2} T {:+.2}, R^2 = {:.5} over T = {:?}",
                        rep.slope, rep.intercept, rep.r_squared, rep.ts
                    ),
                ));
                rates.push(rep);
            }
            Err(e) => checks.push(Check::new(format!("rate linear in T eps={e}"), false, e.to_string())),
        }
    }

    // Nested horizons and radii: p_hat may only fall as T grows or eps shrinks.
    let mut violations = Vec::new();
    for &e in &eps {
        let mut rs: Vec<&SmallBallResult> = results.iter().filter(|r| r.epsilon == e).collect();
        rs.sort_by(|a, b| a.t.total_cmp(&b.t));
        for w in rs.windows(2) {
            if w[1].log_p_hat > w[0].log_p_hat {
                violations.push(format!("eps {e}: T {} -> {}", w[0].t, w[1].t));
            }
        }
    }
    if ts.len() > 1 || eps.iter().any(|&e| results.iter().filter(|r| r.epsilon == e).count() > 1) {
        checks.push(Check::new(
            "monotone in T",
            violations.is_empty(),
            if violations.is_empty() { "p_hat non-increasing in T".into() } else { violations.join("; ") },
        ));
    }
    let mut violations = Vec::new();
    for &t in &ts {
        let mut rs: Vec<&SmallBallResult> = results.iter().filter(|r| r.t == t).collect();
        rs.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
        for w in rs.windows(2) {
            if w[1].log_p_hat < w[0].log_p_hat {
                violations.push(format!("T {t}: eps {} -> {}", w[0].epsilon, w[1].epsilon));
            }
        }
    }
    if eps.len() > 1 {
        checks.push(Check::new(
            "monotone in eps",
            violations.is_empty(),
            if violations.is_empty() { "p_hat non-decreasing in eps".into() } else { violations.join("; ") },
        ));
    }

    if want_svg(p)? {
        let points: Vec<(f64, f64)> = at_fit.iter().map(|r| (r.epsilon, -r.log_p_hat)).collect();
        let s = Series {
            label: format!("T = {fit_t}"),
            points,
            fit: fit.as_ref().map(|f| (-f.theta_hat, f.intercept)),
        };
        out.text("exponent.svg", &svg::loglog("Small-ball exponent", "eps", "-log p_hat", &[s]))?;
    }
    let report = json!({
        "results": results,
        "fit": fit,
        "theta_hat": fit.as_ref().map(|f| f.theta_hat),
        "bracket": fit.as_ref().map(|f| [f.bracket.0, f.bracket.1]).unwrap_or([
            shelab::smallball::exponent_bracket(gamma).0,
            shelab::smallball::exponent_bracket(gamma).1
        ]),
        "rates": rates,
    });
    out.summary(p, &checks, &report)?;
    Ok(checks)
}

fn variance_cmd(p: &Params, out: &Output) -> Result<Vec<Check>, CliError> {
    let gamma: f64 = p.get("gamma")?;
    let k = kernel(gamma, p.get("modes")?)?;
    let trials: usize = p.get("trials")?;
    let seed = rng(p)?;
    let sc = variance_scaling(&k, trials, seed.derive(0))?;
    let dx: f64 = p.get("dx")?;
    let dt = match p.get::<f64>("dt")? {
        d if d == 0.0 => dx * dx / 4.0,
        d => d,
    };
    let lat = lattice_variance_check(&k, p.get("t")?, dx, dt, trials, seed.derive(1))?;
    let mut checks = vec![
        Check::new(
            "variance slope",
            sc.variance_slope_ok(),
            format!(
                "{:.4} over t1 in [1e-5, 1e-2], expected {:.4} +- 0.05",
                sc.variance_slope, sc.variance_expected
            ),
        ),
        Check::new(
            "covariance slope",
            sc.covariance_slope_ok(),
            format!(
                "{:.4} over r in [5e-3, 0.5] at t1 = {}, expected {:.4} +- 0.1",
                sc.covariance_slope, sc.cov_t1, sc.covariance_expected
            ),
        ),
    ];
    if !sc.monte_carlo.is_empty() {
        let worst = sc
            .monte_carlo
            .iter()
            .map(|c| (c.mc - c.series).abs() / c.mc_se)
            .fold(0.0, f64::max);
        checks.push(Check::new(
            "spectral Monte Carlo",
            sc.monte_carlo_ok(),
            format!("{} comparisons, worst deviation {worst:.2} SE (<= 3)", sc.monte_carlo.len()),
        ));
    }
    checks.push(Check::new(
        "lattice variance vs series",
        lat.holds,
        format!(
            "MC {:.5e} +- {:.1e}, series {:.5e}, discretization bias {:.3e} (t = {}, dx = {}, {} trials)",
            lat.mc, lat.mc_se, lat.analytic, lat.bias, lat.t, lat.dx, lat.trials
        ),
    ));
    checks.push(Check::new(
        "lattice variance vs scheme",
        lat.matches_scheme,
        format!("MC {:.5e} vs exact scheme variance {:.5e}, {:.2} SE", lat.mc, lat.scheme, (lat.mc - lat.scheme).abs() / lat.mc_se),
    ));
    out.csv("variance.csv", shelab::analysis::VarianceScalingReport::csv_header(), sc.csv_rows())?;
    if want_svg(p)? {
        let fit = |xs: &[f64], ys: &[f64]| -> Result<(f64, f64), CliError> {
            let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
            let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
            let f = stats::ols(&lx, &ly)?;
            Ok((f.slope, f.intercept))
        };
        let var = Series {
            label: "Var N(t1)".into(),
            points: sc.t1s.iter().copied().zip(sc.variances.iter().copied()).collect(),
            fit: Some(fit(&sc.t1s, &sc.variances)?),
        };
        out.text("variance.svg", &svg::loglog("Variance", "t1", "Var", &[var]))?;
        let cov = Series {
            label: format!("t1 = {}", sc.cov_t1),
            points: sc.separations.iter().copied().zip(sc.covariances.iter().copied()).collect(),
            fit: Some(fit(&sc.separations, &sc.covariances)?),
        };
        out.text("covariance.svg", &svg::loglog("Covariance decay", "r", "Cov", &[cov]))?;
    }
    out.summary(p, &checks, &json!({ "scaling": sc, "lattice": lat }))?;
    Ok(checks)
}

fn parse_directions(raw: &[String]) -> Result<Vec<Direction>, CliError> {
    raw.iter()
        .map(|d| match d.as_str() {
            "space" => Ok(Direction::Space),
            "time" => Ok(Direction::Time),
            other => Err(CliError::config(format!("unknown direction {other:?}"))),
        })
        .collect()
}

fn regularity_cmd(p: &Params, out: &Output) -> Result<Vec<Check>, CliError> {
    let gamma: f64 = p.get("gamma")?;
    let k = kernel(gamma, p.get("modes")?)?;
    let trials: usize = p.get("trials")?;
    let (t, x): (f64, f64) = (p.get("t")?, p.get("x")?);
    let seed = rng(p)?;
    let mut checks = Vec::new();
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for (i, dir) in parse_directions(&p.list("direction")?)?.into_iter().enumerate() {
        let (key, name) = match dir {
            Direction::Space => ("space_lags", "space"),
            Direction::Time => ("time_lags", "time"),
        };
        let lags = match p.list::<f64>(key)? {
            l if l.is_empty() => default_lags(dir),
            l => l,
        };
        let r = regularity_scan(&k, dir, t, x, &lags, trials, seed.derive(i as u64))?;
        checks.push(Check::new(
            format!("{name} msq slope"),
            r.within_tolerance(),
            format!(
                "{:.4} (MC SE {:.3}, exact {:.4}), expected {:.4} +- 0.1{}",
                r.slope,
                r.slope_mc_se,
                r.slope_exact,
                r.expected,
                if r.inconclusive { ", inconclusive" } else { "" }
            ),
        ));
        rows.extend(r.csv_rows());
        let lx: Vec<f64> = r.lags.iter().map(|v| v.ln()).collect();
        let ly: Vec<f64> = r.msq.iter().map(|v| v.ln()).collect();
        let f = stats::ols(&lx, &ly)?;
        series.push(Series {
            label: name.into(),
            points: r.lags.iter().copied().zip(r.msq.iter().copied()).collect(),
            fit: Some((f.slope, f.intercept)),
        });
        reports.push(r);
    }
    out.csv("regularity.csv", shelab::analysis::RegularityReport::csv_header(), rows)?;

    let mut quad = Vec::new();
    if p.flag("quadrature")? {
        let alpha: f64 = p.get("alpha")?;
        let space = holder_quadrature(alpha, p.get("xi")?, Direction::Space, 1.0, &log_lags(1e-3, 0.1, 8))?;
        let time = holder_quadrature(alpha, p.get("zeta")?, Direction::Time, 0.5, &log_lags(1e-4, 0.1, 8))?;
        let mut qrows = Vec::new();
        for q in [&space, &time] {
            let name = if q.direction == Direction::Space { "space" } else { "time" };
            checks.push(Check::new(
                format!("{name} heat integral"),
                q.holds,
                format!(
                    "slope {:.4} >= exponent {} (alpha = {}, constant {:.4})",
                    q.slope, q.exponent, q.alpha, q.constant
                ),
            ));
            for (s, v) in q.separations.iter().zip(&q.values) {
                qrows.push(format!("{name},{s:.17e},{v:.17e}"));
            }
        }
        out.csv("heat_integrals.csv", "direction,separation,value", qrows)?;
        quad = vec![space, time];
    }
    if want_svg(p)? {
        out.text("regularity.svg", &svg::loglog("Mean-square increments", "lag", "msq", &series))?;
    }
    out.summary(p, &checks, &json!({ "scans": reports, "heat_integrals": quad }))?;
    Ok(checks)
}

fn tail_rows<'a>(kind: &'a str, levels: &'a [TailLevel]) -> impl Iterator<Item = String> + 'a {
    levels
        .iter()
        .map(move |l| format!("{kind},{:.17e},{},{:.17e}", l.lambda, l.exceedances, l.frequency))
}

fn tails_cmd(p: &Params, out: &Output) -> Result<Vec<Check>, CliError> {
    let gamma: f64 = p.get("gamma")?;
    let k = kernel(gamma, p.get("modes")?)?;
    let trials: usize = p.get("trials")?;
    let seed = rng(p)?;
    let (t, x, sep): (f64, f64, f64) = (p.get("t")?, p.get("x")?, p.get("sep")?);
    let inc = increment_tail_check(
        &k,
        SpaceTimePoint { t, x },
        SpaceTimePoint { t, x: x + sep },
        &p.list::<f64>("z")?,
        trials,
        seed.derive(0),
    )?;
    let patch = PatchSpec::new(p.get("beta")?, p.get("eps")?);
    let bs = beta_scaling(&k, patch, p.get("factor")?, trials, seed.derive(1))?;
    let checks = vec![
        Check::new(
            "increment envelope",
            inc.envelope_holds,
            format!(
                "freq <= {:.3} exp(-{:.3} lambda^2 / msq) at |x - y| = {sep}{}",
                inc.c1,
                inc.c2,
                if inc.one_sided { ", some levels one-sided" } else { "" }
            ),
        ),
        Check::new(
            "patch-sup envelope",
            bs.base.envelope_holds && bs.scaled.envelope_holds,
            format!(
                "freq <= {:.3} exp(-{:.3} lambda^2) at beta = {}, {:.3} exp(-{:.3} lambda^2) at beta = {}",
                bs.base.c1, bs.base.lambda2_slope, bs.base.patch.beta, bs.scaled.c1, bs.scaled.lambda2_slope, bs.scaled.patch.beta
            ),
        ),
        Check::new(
            "sup dominates point",
            bs.base.ordering_holds && bs.scaled.ordering_holds,
            "patch sup >= end-point value on every trial",
        ),
        Check::new(
            "beta scaling",
            bs.within_tolerance,
            format!(
                "slope ratio {:.4} vs {:.4} = {}^-(2-gamma)/2, tolerance 20%",
                bs.ratio, bs.expected, bs.factor
            ),
        ),
    ];
    let rows: Vec<String> = tail_rows("increment", &inc.levels)
        .chain(tail_rows("sup_base", &bs.base.levels))
        .chain(tail_rows("point_base", &bs.base.point_levels))
        .chain(tail_rows("sup_scaled", &bs.scaled.levels))
        .chain(tail_rows("point_scaled", &bs.scaled.point_levels))
        .collect();
    out.csv("tails.csv", "kind,lambda,exceedances,frequency", rows)?;
    out.summary(p, &checks, &json!({ "increment": inc, "beta_scaling": bs }))?;
    Ok(checks)
}

fn eta_cmd(p: &Params, out: &Output) -> Result<Vec<Check>, CliError> {
    let gamma: f64 = p.get("gamma")?;
    let epsilon: f64 = p.get("eps")?;
    let k = RieszKernel::new(gamma, p.get("modes")?)?;
    let mut c0s: Vec<f64> = p.list("C0")?;
    c0s.sort_by(f64::total_cmp);
    let sweep = eta_sweep(&k, epsilon, &c0s)?;
    let admissible: Vec<_> = sweep.iter().filter(|s| s.norm_11 < 1.0 / 3.0).collect();
    let mut checks = vec![
        Check::new(
            "eta bound when admissible",
            !admissible.is_empty() && admissible.iter().all(|s| s.eta_l1 <= 0.5),
            format!(
                "{} of {} C0 values have norm_11 < 1/3; their max eta_l1 = {:.4} (<= 1/2)",
                admissible.len(),
                sweep.len(),
                admissible.iter().map(|s| s.eta_l1).fold(0.0, f64::max)
            ),
        ),
        Check::new(
            "monotone in C0",
            sweep.windows(2).all(|w| w[1].norm_11 >= w[0].norm_11 && w[1].eta_l1 >= w[0].eta_l1),
            "norm_11 and eta_l1 non-decreasing in C0",
        ),
    ];
    out.csv(
        "eta.csv",
        "C0,norm_11,eta_l1",
        sweep.iter().map(|s| format!("{},{:.17e},{:.17e}", s.big_c0, s.norm_11, s.eta_l1)),
    )?;

    let pairs: usize = p.get("pairs")?;
    let max_dim: usize = p.get("max_dim")?;
    let trials: usize = p.get("corr_trials")?;
    if max_dim < 2 {
        return Err(CliError::config("--max_dim must be >= 2"));
    }
    let seed = rng(p)?;
    let mut corr = Vec::new();
    for i in 0..pairs {
        let dim = 2 + i % (max_dim - 1);
        let (cov, kb, lb) = random_case(dim, seed.derive2(0, i as u64))?;
        corr.push(gaussian_correlation_spotcheck(&cov, &kb, &lb, trials, seed.derive2(1, i as u64))?);
    }
    if pairs > 0 {
        checks.push(Check::new(
            "correlation inequality",
            corr.iter().all(|c| c.holds),
            format!(
                "{pairs} random box pairs, dims 2..={}, smallest gap/SE {:.2} (>= -3)",
                max_dim.min(pairs + 1),
                corr.iter().map(|c| c.gap / c.se.max(1e-300)).fold(f64::INFINITY, f64::min)
            ),
        ));
    }

    // Grid covariance on its first 5 points, sup-balls of 1 and 1.5 sd.
    let grid = shelab::smallball::make_grid(epsilon, gamma, p.get("grid_C0")?, 1.0)?;
    let rep = eta_report(&k, &grid)?;
    let d = rep.dim.min(5);
    let sigma = DMatrix::from_fn(d, d, |i, j| rep.sigma[i * rep.dim + j]);
    let sd = sigma[(0, 0)].sqrt();
    let grid_case = gaussian_correlation_spotcheck(
        &sigma,
        &SymmetricBox::ball(d, sd)?,
        &SymmetricBox::ball(d, 1.5 * sd)?,
        trials,
        seed.derive(2),
    )?;
    checks.push(Check::new(
        "correlation on grid covariance",
        grid_case.holds,
        format!(
            "mu(K & L) = {:.4} vs mu(K) mu(L) = {:.4}, gap {:.4} +- {:.4}",
            grid_case.mu_kl,
            grid_case.mu_k * grid_case.mu_l,
            grid_case.gap,
            grid_case.se
        ),
    ));
    out.csv(
        "correlation.csv",
        "case,dim,mu_k,mu_l,mu_kl,gap,se",
        corr.iter()
            .chain(std::iter::once(&grid_case))
            .enumerate()
            .map(|(i, c)| format!("{i},{},{},{},{},{:.17e},{:.17e}", c.dim, c.mu_k, c.mu_l, c.mu_kl, c.gap, c.se)),
    )?;
    let report: Value = json!({ "sweep": sweep, "correlation": corr, "grid_correlation": grid_case });
    out.summary(p, &checks, &report)?;
    Ok(checks)
}

fn factorize_cmd(p: &Params, out: &Output) -> Result<Vec<Check>, CliError> {
    let alpha: f64 = p.get("alpha")?;
    let gamma: f64 = p.get("gamma")?;
    let modes: Vec<usize> = p.list("modes")?;
    let t_end: f64 = p.get("T")?;
    let dt: f64 = p.get("dt")?;
    let factor: usize = p.get("factor")?;
    let levels: usize = p.get("levels")?;
    if levels == 0 || factor < 2 {
        return Err(CliError::config("need --levels >= 1 and --factor >= 2"));
    }
    let dt_coarse = dt * (factor as f64).powi(levels as i32 - 1);
    let study = factorization_study(alpha, gamma, &modes, t_end, dt_coarse, factor, levels, p.get("paths")?, rng(p)?)?;
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for s in &study {
        let finest = *s.max_rel_err.last().unwrap_or(&f64::NAN);
        checks.push(Check::new(
            format!("relative error mode {}", s.mode),
            finest <= 1e-2,
            format!("max over paths {} at dt = {} (<= 1e-2)", sci(finest), sci(*s.steps.last().unwrap_or(&dt))),
        ));
        checks.push(Check::new(
            format!("refinement mode {}", s.mode),
            s.decreases(),
            format!(
                "scaled RMS error {} -> {} from dt = {} to {}",
                sci(s.rms_scaled_err[0]),
                sci(*s.rms_scaled_err.last().unwrap_or(&f64::NAN)),
                sci(s.steps[0]),
                sci(*s.steps.last().unwrap_or(&dt))
            ),
        ));
        for l in 0..s.steps.len() {
            rows.push(format!(
                "{},{:.17e},{:.17e},{:.17e}",
                s.mode, s.steps[l], s.rms_scaled_err[l], s.max_rel_err[l]
            ));
        }
        series.push(Series {
            label: format!("mode {}", s.mode),
            points: s.steps.iter().copied().zip(s.rms_scaled_err.iter().copied()).collect(),
            fit: None,
        });
    }
    out.csv("factorize.csv", "mode,dt,rms_scaled_err,max_rel_err", rows)?;
    if want_svg(p)? {
        out.text("factorize.svg", &svg::loglog("Factorization error", "dt", "scaled RMS error", &series))?;
    }
    out.summary(p, &checks, &study)?;
    Ok(checks)
}
