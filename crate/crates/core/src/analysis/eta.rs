//! Conditional-regression coefficients on the grid `x_j = j eps^2` at time `t1`.
//!
//! For each grid index `j`, `eta^{(j)}` solves `Sigma_{<j} eta = Sigma_{<j, j}`,
//! the regression of `N(t1, x_j)` on the earlier grid values. Writing the
//! correlation matrix as `T = I - A`, a Neumann-series argument gives
//! `||eta||_1 <= ||A||_{1,1} / (1 - ||A||_{1,1})`, hence `||eta||_1 <= 1/2`
//! whenever `||A||_{1,1} < 1/3`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::series::covariance_at;
use crate::error::{Error, Result};
use crate::kernel::RieszKernel;
use crate::smallball::GridSpec;

/// Largest grid handled by the dense solves.
pub const MAX_POINTS: usize = 2000;
const EIGEN_LIMIT: usize = 600;
const ADMISSIBILITY_MODES: usize = 2048;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceMatrixReport {
    pub gamma: f64,
    pub epsilon: f64,
    pub big_c0: f64,
    pub t1: f64,
    pub dim: usize,
    /// Row-major `dim x dim` covariance of `N(t1, x_j)`.
    pub sigma: Vec<f64>,
    /// Row-major correlation matrix.
    pub t_corr: Vec<f64>,
    /// Max absolute column sum of `A = I - T`.
    pub norm_11: f64,
    /// `eta[j]` has length `j`.
    pub eta: Vec<Vec<f64>>,
    pub eta_l1: f64,
    /// Smallest eigenvalue of `Sigma`, computed for grids up to 600 points.
    pub min_eigenvalue: Option<f64>,
    pub ridge: f64,
    /// `norm_11 < 1/3` implies `eta_l1 <= 1/2` on this grid.
    pub implication_holds: bool,
}

/// Covariance by lag `k = 0..dim`, using stationarity.
fn lag_covariances(kernel: &RieszKernel, grid: &GridSpec, dim: usize) -> Result<Vec<f64>> {
    let e2 = grid.epsilon * grid.epsilon;
    (0..dim)
        .map(|k| covariance_at(kernel, grid.t1, k as f64 * e2).map(|s| s.value))
        .collect()
}

/// `||I - T||_{1,1}` from lag covariances (Toeplitz structure).
fn norm_11_from_lags(lags: &[f64], dim: usize) -> f64 {
    let var = lags[0];
    (0..dim)
        .map(|j| {
            (0..dim)
                .filter(|&i| i != j)
                .map(|i| (lags[i.abs_diff(j)] / var).abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

fn check_size(grid: &GridSpec) -> Result<usize> {
    let dim = grid.positions().len();
    if dim > MAX_POINTS {
        return Err(Error::Config(format!(
            "grid has {dim} points; dense solves are limited to {MAX_POINTS}"
        )));
    }
    Ok(dim)
}

pub fn eta_report(kernel: &RieszKernel, grid: &GridSpec) -> Result<CovarianceMatrixReport> {
    let dim = check_size(grid)?;
    let lags = lag_covariances(kernel, grid, dim)?;
    let sigma = DMatrix::from_fn(dim, dim, |i, j| lags[i.abs_diff(j)]);
    let var = lags[0];
    if !(var > 0.0) {
        return Err(Error::Conditioning { min_eigenvalue: var });
    }
    let t_corr = sigma.map(|v| v / var);
    let norm_11 = norm_11_from_lags(&lags, dim);

    let sol = solve_eta(&sigma)?;
    Ok(CovarianceMatrixReport {
        gamma: grid.gamma,
        epsilon: grid.epsilon,
        big_c0: grid.big_c0,
        t1: grid.t1,
        dim,
        sigma: sigma.transpose().iter().copied().collect(),
        t_corr: t_corr.transpose().iter().copied().collect(),
        norm_11,
        implication_holds: norm_11 >= 1.0 / 3.0 || sol.eta_l1 <= 0.5,
        eta: sol.eta,
        eta_l1: sol.eta_l1,
        min_eigenvalue: sol.min_eigenvalue,
        ridge: sol.ridge,
    })
}

#[derive(Debug, Clone)]
pub struct EtaSolution {
    pub eta: Vec<Vec<f64>>,
    pub eta_l1: f64,
    pub min_eigenvalue: Option<f64>,
    pub ridge: f64,
}

fn min_eigen(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Regression coefficients of each coordinate on its predecessors.
///
/// One Cholesky factorization serves every `j`, since the leading blocks of
/// `L` factor the leading blocks of `Sigma`. A ridge of `1e-12 trace` is
/// added when the plain factorization fails.
pub fn solve_eta(sigma: &DMatrix<f64>) -> Result<EtaSolution> {
    let dim = sigma.nrows();
    let min_eigenvalue = (dim <= EIGEN_LIMIT).then(|| min_eigen(sigma));
    let (chol, ridge) = match sigma.clone().cholesky() {
        Some(c) => (c, 0.0),
        None => {
            let ridge = 1e-12 * sigma.trace();
            let shifted = sigma + DMatrix::identity(dim, dim) * ridge;
            match shifted.cholesky() {
                Some(c) => (c, ridge),
                None => {
                    return Err(Error::Conditioning {
                        min_eigenvalue: min_eigenvalue.unwrap_or_else(|| min_eigen(sigma)),
                    })
                }
            }
        }
    };
    let l = chol.l();
    let mut eta = Vec::with_capacity(dim);
    let mut eta_l1 = 0.0f64;
    if dim > 0 {
        eta.push(Vec::new());
    }
    for j in 1..dim {
        let lj = l.view((0, 0), (j, j));
        let rhs = DVector::from_fn(j, |i, _| sigma[(i, j)]);
        let singular = || Error::Conditioning {
            min_eigenvalue: min_eigenvalue.unwrap_or(0.0),
        };
        let y = lj.solve_lower_triangular(&rhs).ok_or_else(singular)?;
        let x = lj.tr_solve_lower_triangular(&y).ok_or_else(singular)?;
        eta_l1 = eta_l1.max(x.iter().map(|v| v.abs()).sum());
        eta.push(x.iter().copied().collect());
    }
    Ok(EtaSolution {
        eta,
        eta_l1,
        min_eigenvalue,
        ridge,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepPoint {
    pub big_c0: f64,
    pub norm_11: f64,
    pub eta_l1: f64,
}

/// `norm_11` and `eta_l1` as functions of `C0`.
pub fn eta_sweep(
    kernel: &RieszKernel,
    epsilon: f64,
    big_c0s: &[f64],
) -> Result<Vec<SweepPoint>> {
    big_c0s
        .iter()
        .map(|&c| {
            let grid = crate::smallball::make_grid(epsilon, kernel.gamma(), c, 1.0)?;
            let r = eta_report(kernel, &grid)?;
            Ok(SweepPoint {
                big_c0: c,
                norm_11: r.norm_11,
                eta_l1: r.eta_l1,
            })
        })
        .collect()
}

/// First `C0` in a sorted sweep whose `eta_l1` exceeds 1/2.
pub fn crossing(sweep: &[SweepPoint]) -> Option<f64> {
    sweep.iter().find(|p| p.eta_l1 > 0.5).map(|p| p.big_c0)
}

/// Warning text when the grid's `C0` fails `norm_11 < 1/3`.
pub(crate) fn admissibility(grid: &GridSpec) -> Result<Option<String>> {
    let dim = grid.positions().len();
    if dim > MAX_POINTS {
        return Ok(Some(format!("coefficient control not checked: {dim} grid points")));
    }
    let kernel = admissibility_kernel(grid.gamma)?;
    let lags = lag_covariances(&kernel, grid, dim)?;
    let norm = norm_11_from_lags(&lags, dim);
    Ok((norm >= 1.0 / 3.0).then(|| {
        format!(
            "C0 = {} is not admissible: ||I - T||_11 = {norm:.4} >= 1/3",
            grid.big_c0
        )
    }))
}

fn admissibility_kernel(gamma: f64) -> Result<std::sync::Arc<RieszKernel>> {
    use std::collections::HashMap;
    use std::sync::{Arc, Mutex, OnceLock};
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<RieszKernel>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(k) = cache.lock().expect("kernel cache poisoned").get(&gamma.to_bits()) {
        return Ok(k.clone());
    }
    let k = Arc::new(RieszKernel::new(gamma, ADMISSIBILITY_MODES)?);
    cache
        .lock()
        .expect("kernel cache poisoned")
        .insert(gamma.to_bits(), k.clone());
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smallball::make_grid;

    #[test]
    fn single_predecessor_is_correlation() {
        let k = RieszKernel::new(0.5, 1024).unwrap();
        let g = make_grid(0.2, 0.5, 1e3, 1.0).unwrap();
        let r = eta_report(&k, &g).unwrap();
        let rho = r.sigma[1] / r.sigma[0];
        assert!((r.eta[1][0] - rho).abs() < 1e-12);
        assert!(r.eta[1][0].abs() <= 1.0);
    }

    #[test]
    fn correlation_diagonal_is_one() {
        let k = RieszKernel::new(0.5, 1024).unwrap();
        let g = make_grid(0.3, 0.5, 1.0, 1.0).unwrap();
        let r = eta_report(&k, &g).unwrap();
        for i in 0..r.dim {
            assert!((r.t_corr[i * r.dim + i] - 1.0).abs() < 1e-15);
        }
        assert!(r.min_eigenvalue.unwrap() >= -1e-10 * r.sigma[0] * r.dim as f64);
    }

    #[test]
    fn independent_coordinates_give_zero_eta() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 0.5, 3.0]));
        let sol = solve_eta(&sigma).unwrap();
        assert_eq!(sol.eta_l1, 0.0);
    }

    #[test]
    fn singular_matrix_reports_eigenvalue() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match solve_eta(&sigma) {
            Err(Error::Conditioning { min_eigenvalue }) => assert!((min_eigenvalue + 1.0).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }
}
