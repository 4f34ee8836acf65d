use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("singularity: covariance is infinite at r = {r}")]
    Singularity { r: f64 },

    /// Quadrature or series failed to reach its tolerance, or a state went non-finite.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Solver or experiment parameters are inconsistent (e.g. explicit-scheme stability).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("sigma contract violated at (t={t}, x={x}, u={u}): sigma = {value} outside [{lo}, {hi}]")]
    Contract {
        t: f64,
        x: f64,
        u: f64,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("covariance matrix is singular or indefinite (smallest eigenvalue {min_eigenvalue:e})")]
    Conditioning { min_eigenvalue: f64 },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
