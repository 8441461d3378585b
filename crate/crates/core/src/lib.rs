//! Mixed-effects logistic regression fitted by maximum (approximate)
//! likelihood or by maximum softly-penalized likelihood (MSPL).
//!
//! The penalized estimator maximizes
//! `ℓ(θ) + c·½ log det(XᵀWX) + c·Σ D(ψ_m)` with `c = 2√(p/n)`, which keeps
//! fixed effects finite and the random-effects covariance non-degenerate while
//! leaving ML asymptotics and contrast equivariance intact.
//!
//! The numerical core is generic over [`Real`]; the aliases below fix the
//! scalar to `f64` (or `f32`).

pub mod cli;
pub mod error;
pub mod inference;
pub mod likelihood;
pub mod model;
pub mod optimize;
pub mod penalties;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use likelihood::{Approximation, ApproxLikelihood, ClusterMode, QuadratureRule};
pub use model::{Cluster, ClusteredDataset, CovarianceMatrix, Theta};
pub use optimize::{BoundaryThresholds, FitOptions, FitResult, Method};
pub use penalties::PenaltyValue;
pub use scalar::Real;

pub type Cluster64 = Cluster<f64>;
pub type Dataset64 = ClusteredDataset<f64>;
pub type Theta64 = Theta<f64>;
pub type Covariance64 = CovarianceMatrix<f64>;
pub type FitOptions64 = FitOptions<f64>;
pub type FitResult64 = FitResult<f64>;

pub type Cluster32 = Cluster<f32>;
pub type Dataset32 = ClusteredDataset<f32>;
pub type Theta32 = Theta<f32>;
pub type FitOptions32 = FitOptions<f32>;
pub type FitResult32 = FitResult<f32>;
