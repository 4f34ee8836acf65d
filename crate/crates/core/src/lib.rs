//! Stochastic heat equation on the torus `[-1, 1)` driven by Gaussian noise
//! that is white in time and has Riesz covariance `|x - y|^{-gamma}` in space.
//!
//! Modules:
//! - [`kernel`]: heat kernel, noise covariance and its Fourier coefficients.
//! - [`noise`]: exact spectral sampling of the stochastic convolution.
//! - [`solver`]: explicit lattice scheme for general diffusion coefficients.
//! - [`smallball`]: small-ball probability estimation and exponent fits.
//! - [`analysis`]: variance/covariance series, regularity and tail checks.

pub mod analysis;
pub mod error;
pub mod kernel;
pub mod noise;
pub mod parallel;
pub mod quad;
pub mod rng;
pub mod smallball;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};
pub use kernel::{heat_kernel, riesz_covariance, HeatKernelForm, HeatKernelQuery, RieszKernel};
pub use noise::{evaluate_field, lattice_noise_increment, ou_step, Lattice, SpectralState};
pub use rng::RngSpec;
