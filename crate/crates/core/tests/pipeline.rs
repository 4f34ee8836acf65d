//! End-to-end checks that cross module boundaries: samplers against the
//! analytic series, splitting against direct Monte Carlo, and determinism.

use std::sync::Arc;

use shelab::analysis::correlation::random_case;
use shelab::analysis::{
    covariance_of_n, eta_report, gaussian_correlation_spotcheck, lattice_variance_check, variance_of_n,
};
use shelab::analysis::series::covariance_at;
use shelab::smallball::{
    estimate_small_ball, estimate_small_ball_grid, estimate_small_ball_splitting, make_grid, SmallBallResult,
    SolverConfig, SplittingConfig,
};
use shelab::solver::{solve_constant_sigma, InitialData};
use shelab::{Lattice, RieszKernel, RngSpec};

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

#[test]
fn spectral_paths_reproduce_the_series_moments() {
    let kernel = Arc::new(RieszKernel::new(0.5, 256).unwrap());
    let t = 0.01;
    let lattice = Lattice::new(32).unwrap();
    let base = RngSpec::new(5, 0);
    let trials = 4000;
    let (mut u0, mut u16, mut prod) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..trials {
        let path = solve_constant_sigma(kernel.clone(), 1.0, &InitialData::Zero, t, 1e-3, lattice, base.derive(i))
            .unwrap();
        let last = path.row(path.values.len() / path.points - 1);
        u0.push(last[0]);
        u16.push(last[16]);
        prod.push(last[0] * last[16]);
    }
    let var = variance_of_n(&kernel, t).unwrap().truncated;
    let (m, v) = mean_var(&u0);
    assert!(m.abs() < 4.0 * (v / trials as f64).sqrt(), "mean {m}");
    let se = var * (2.0 / trials as f64).sqrt();
    assert!((v - var).abs() < 4.0 * se, "variance {v} vs series {var}");

    // x_0 = -1 and x_16 = 0 are at torus distance 1.
    let cov = covariance_at(&kernel, t, 1.0).unwrap().truncated;
    let (c, cv) = mean_var(&prod);
    assert!((c - cov).abs() < 4.0 * (cv / trials as f64).sqrt(), "covariance {c} vs series {cov}");
    // Lag form and distance form agree: 16 steps of eps^2 = 1/16 is distance 1.
    let lagged = covariance_of_n(&kernel, t, 16, 0.25).unwrap().truncated;
    assert!((lagged - cov).abs() < 1e-12 * cov.abs().max(1.0));
}

#[test]
fn lattice_scheme_matches_its_closed_form_and_the_series() {
    let kernel = RieszKernel::new(0.5, 128).unwrap();
    let dx = 1.0 / 16.0;
    let r = lattice_variance_check(&kernel, 0.01, dx, dx * dx / 4.0, 4000, RngSpec::new(9, 1)).unwrap();
    assert!(r.matches_scheme, "{r:?}");
    assert!(r.holds, "{r:?}");
    assert!(r.bias > 0.0);
}

fn coarse() -> SolverConfig {
    SolverConfig {
        gamma: 0.5,
        modes: 64,
        dx: 1.0 / 8.0,
        dt: 1.0 / 64.0,
        sigma: 1.0,
    }
}

#[test]
fn splitting_agrees_with_direct_monte_carlo() {
    let cfg = coarse();
    let (eps, t) = (1.0, 0.125);
    let direct = estimate_small_ball(eps, t, 8000, &cfg, RngSpec::new(21, 0)).unwrap();
    let p = direct.p_hat;
    assert!(p > 0.02 && p < 0.9, "p = {p}");
    let se_direct = ((1.0 - p) / (direct.trials as f64 * p)).sqrt();
    let split = SplittingConfig { particles: 500, replicates: 8 };
    let s = estimate_small_ball_splitting(eps, &[t], &split, &cfg, RngSpec::new(22, 0)).unwrap().remove(0);
    let se_split = s.log_se.expect("replicate spread");
    let z = (p.ln() - s.log_p_hat).abs() / (se_direct.powi(2) + se_split.powi(2)).sqrt();
    assert!(z < 4.0, "direct ln p {} vs splitting {} (z = {z:.2})", p.ln(), s.log_p_hat);
    assert_eq!(s.trials, 4000);
}

#[test]
fn estimates_are_monotone_in_horizon_and_radius() {
    let cfg = coarse();
    let ts = [0.0625, 0.125, 0.25];
    let eps = [0.4, 0.5, 0.7];
    let grid = estimate_small_ball_grid(&eps, &ts, 1000, &cfg, RngSpec::new(3, 0)).unwrap();
    let hits = |e: f64, t: f64| grid.iter().find(|r| r.epsilon == e && r.t == t).unwrap().hits;
    for w in ts.windows(2) {
        for &e in &eps {
            assert!(hits(e, w[0]) >= hits(e, w[1]));
        }
    }
    for w in eps.windows(2) {
        for &t in &ts {
            assert!(hits(w[0], t) <= hits(w[1], t));
        }
    }
    let split = SplittingConfig { particles: 200, replicates: 4 };
    let nested = estimate_small_ball_splitting(0.5, &ts, &split, &cfg, RngSpec::new(4, 0)).unwrap();
    for w in nested.windows(2) {
        assert!(w[0].log_p_hat >= w[1].log_p_hat);
    }
}

fn bits(rs: &[SmallBallResult]) -> Vec<u64> {
    rs.iter()
        .flat_map(|r| [r.p_hat.to_bits(), r.log_p_hat.to_bits(), r.ci_lo.to_bits(), r.ci_hi.to_bits(), r.hits])
        .collect()
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let cfg = coarse();
    let split = SplittingConfig { particles: 64, replicates: 3 };
    let run = || estimate_small_ball_splitting(0.45, &[0.0625, 0.125], &split, &cfg, RngSpec::new(8, 2)).unwrap();
    let pooled = run();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
    assert_eq!(bits(&pooled), bits(&single));
    assert_eq!(bits(&pooled), bits(&run()));
}

#[test]
fn eta_bound_holds_on_an_admissible_grid() {
    let kernel = RieszKernel::new(0.5, 2048).unwrap();
    let grid = make_grid(0.2, 0.5, 1e-6, 1.0).unwrap();
    let r = eta_report(&kernel, &grid).unwrap();
    assert!(r.norm_11 < 1.0 / 3.0, "norm_11 = {}", r.norm_11);
    assert!(r.eta_l1 <= 0.5, "eta_l1 = {}", r.eta_l1);
    assert!(r.implication_holds);
    assert_eq!(r.eta.len(), r.dim);
}

#[test]
fn correlation_inequality_on_random_boxes() {
    for dim in [2, 5, 8] {
        let (cov, k, l) = random_case(dim, RngSpec::new(30, dim as u64)).unwrap();
        let r = gaussian_correlation_spotcheck(&cov, &k, &l, 20000, RngSpec::new(31, dim as u64)).unwrap();
        assert!(r.holds, "{r:?}");
        assert!(r.mu_kl <= r.mu_k.min(r.mu_l) + 1e-12);
    }
}
