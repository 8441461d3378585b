use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error(
        "mode finding failed for cluster {cluster} after {iterations} iterations \
         (gradient norm {grad_norm:e})"
    )]
    ModeFinding {
        cluster: usize,
        iterations: usize,
        grad_norm: f64,
        /// Last Newton iterate in the whitened (v = L⁻¹u) coordinates.
        last_iterate: Vec<f64>,
    },

    #[error("adaptive quadrature supports only q = 1 random effects, got q = {0}")]
    UnsupportedDimension(usize),

    #[error("fixed-effects information matrix XᵀWX is singular")]
    SingularInformation,

    #[error("non-finite objective while differencing coordinate {coordinate}")]
    Gradient { coordinate: usize },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("fit has not converged")]
    NotConverged,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
