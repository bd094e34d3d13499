//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Errors produced by matrix construction, marginal evaluation, and the
/// Monte Carlo estimators.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (max asymmetry {max_asym:.3e} exceeds tolerance)")]
    NotSymmetric { max_asym: f64 },

    #[error("matrix is not positive definite (eigenvalue {min_eig:.3e} below floor {floor:.3e})")]
    NotPositiveDefinite { min_eig: f64, floor: f64 },

    #[error("matrix is not positive semi-definite (eigenvalue {min_eig:.3e})")]
    NotPositiveSemiDefinite { min_eig: f64 },

    #[error("matrix has rank zero")]
    ZeroRank,

    #[error("Stein-type priors require dimension >= 3, got {dim}")]
    SteinDimension { dim: usize },

    #[error("Stein prior evaluated at its pole mu = 0")]
    SteinPole,

    #[error("radial prior must be declared nonincreasing for this operation")]
    RadialNotNonincreasing,

    #[error("nonpositive step size {step}")]
    NonPositiveStep { step: f64 },

    #[error("Loewner order violated: eigenvalue {min_eig:.3e} of the difference is negative")]
    LoewnerOrderViolated { min_eig: f64 },

    #[error("rank of the covariance difference is {rank}, need at least {need}")]
    RankDeficientDifference { rank: usize, need: usize },

    #[error("Gaussian KL: supports are incompatible (mean mismatch {mismatch:.3e} along a null direction); divergence is infinite")]
    IncompatibleSupports { mismatch: f64 },

    #[error("quadrature did not converge: error {err:.3e} after {panels} panels (tolerance {tol:.3e})")]
    QuadratureNonConvergence { err: f64, panels: usize, tol: f64 },

    #[error("marginal evaluated to a non-finite value at |z| = {z_norm:.3e}")]
    NonFiniteMarginal { z_norm: f64 },

    #[error("rejection sampler acceptance rate below {min_rate:.1e} ({rejections} consecutive rejections)")]
    AcceptanceRateTooLow { min_rate: f64, rejections: usize },

    #[error("condition number {cond:.3e} of X X^T exceeds the cap {cap:.3e}")]
    IllConditionedDesign { cond: f64, cap: f64 },

    #[error("future design matrix is zero: no reducible future information")]
    ZeroFutureDesign,

    #[error("replication count {n} is too small (need at least {min})")]
    TooFewReplications { n: usize, min: usize },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
