//! Monte Carlo spot-check of the Gaussian correlation inequality
//! `mu(K ∩ L) >= mu(K) mu(L)` for symmetric boxes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;
use crate::rng::RngSpec;

/// Symmetric box `{ |x_i| <= half_widths[i] }`; infinite entries leave a
/// coordinate unconstrained.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SymmetricBox {
    pub half_widths: Vec<f64>,
}

impl SymmetricBox {
    pub fn new(half_widths: Vec<f64>) -> Result<Self> {
        if half_widths.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Config("box half-widths must be positive".into()));
        }
        Ok(SymmetricBox { half_widths })
    }

    /// Same half-width in every coordinate.
    pub fn ball(dim: usize, radius: f64) -> Result<Self> {
        Self::new(vec![radius; dim])
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.half_widths).all(|(v, w)| v.abs() <= *w)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub dim: usize,
    pub trials: usize,
    pub mu_k: f64,
    pub mu_l: f64,
    pub mu_kl: f64,
    /// `mu_kl - mu_k mu_l`.
    pub gap: f64,
    /// Delta-method standard error of `gap`.
    pub se: f64,
    /// `gap >= -3 se`.
    pub holds: bool,
}

/// Estimates `mu(K)`, `mu(L)` and `mu(K ∩ L)` for `N(0, covariance)` from one
/// set of samples.
pub fn gaussian_correlation_spotcheck(
    covariance: &DMatrix<f64>,
    k: &SymmetricBox,
    l: &SymmetricBox,
    trials: usize,
    rng: RngSpec,
) -> Result<CorrelationReport> {
    let dim = covariance.nrows();
    if covariance.ncols() != dim || k.half_widths.len() != dim || l.half_widths.len() != dim {
        return Err(Error::Config("covariance and boxes must share one dimension".into()));
    }
    if trials < 2 {
        return Err(Error::Config("need >= 2 trials".into()));
    }
    let chol = covariance.clone().cholesky().ok_or_else(|| Error::Conditioning {
        min_eigenvalue: covariance.symmetric_eigenvalues().min(),
    })?;
    let factor = chol.l();
    let hits: Vec<(bool, bool)> = parallel::map_collect(trials, rng, |_, r| {
        let z = DVector::from_fn(dim, |_, _| r.sample::<f64, _>(StandardNormal));
        let x = &factor * z;
        (k.contains(x.as_slice()), l.contains(x.as_slice()))
    });
    let n = trials as f64;
    let mu_k = hits.iter().filter(|h| h.0).count() as f64 / n;
    let mu_l = hits.iter().filter(|h| h.1).count() as f64 / n;
    let mu_kl = hits.iter().filter(|h| h.0 && h.1).count() as f64 / n;
    let gap = mu_kl - mu_k * mu_l;
    // Influence function of the gap: 1_{KL} - mu_L 1_K - mu_K 1_L.
    let psi: crate::stats::Moments = hits
        .iter()
        .map(|&(a, b)| {
            let (a, b) = (a as u8 as f64, b as u8 as f64);
            a * b - mu_l * a - mu_k * b
        })
        .collect();
    let se = psi.variance().sqrt() / n.sqrt();
    Ok(CorrelationReport {
        dim,
        trials,
        mu_k,
        mu_l,
        mu_kl,
        gap,
        se,
        holds: gap >= -3.0 * se,
    })
}

/// A random covariance `A A^T / dim + 0.1 I` and two random boxes with
/// half-widths in `[0.3, 2]` standard deviations.
pub fn random_case(dim: usize, rng: RngSpec) -> Result<(DMatrix<f64>, SymmetricBox, SymmetricBox)> {
    if dim == 0 {
        return Err(Error::Config("dimension must be positive".into()));
    }
    let mut r = rng.rng();
    let a = DMatrix::from_fn(dim, dim, |_, _| r.sample::<f64, _>(StandardNormal));
    let cov = &a * a.transpose() / dim as f64 + DMatrix::identity(dim, dim) * 0.1;
    let widths = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..dim)
            .map(|i| cov[(i, i)].sqrt() * r.random_range(0.3..2.0))
            .collect()
    };
    let k = SymmetricBox::new(widths(&mut r))?;
    let l = SymmetricBox::new(widths(&mut r))?;
    Ok((cov, k, l))
}
