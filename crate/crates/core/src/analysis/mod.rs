//! Numerical checks of the variance, covariance, regularity and tail
//! estimates for the stochastic convolution `N(t, x)` with `sigma = 1`.

pub mod correlation;
pub mod eta;
pub mod heat_integrals;
pub mod regularity;
pub mod scaling;
pub mod series;
pub mod tails;

pub use correlation::{gaussian_correlation_spotcheck, CorrelationReport, SymmetricBox};
pub use eta::{eta_report, eta_sweep, CovarianceMatrixReport};
pub use heat_integrals::{holder_quadrature, HolderQuadratureReport};
pub use regularity::{regularity_scan, Direction, RegularityReport};
pub use scaling::{lattice_variance_check, variance_scaling, LatticeVarianceReport, VarianceScalingReport};
pub use series::{covariance_of_n, variance_of_n, SeriesValue};
pub use tails::{increment_tail_check, sup_tail_check, IncrementTailReport, SupTailReport};
