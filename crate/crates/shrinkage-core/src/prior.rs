//! The prior family: uniform, Stein, rescaled Stein, Gaussian ridge, and
//! general radial priors, plus the `A*` whitening construction and a numeric
//! superharmonicity check.
//!
//! Log-densities are defined up to an additive constant per variant; every
//! downstream quantity (the predictive ratio, risk differences) is invariant
//! to that constant. The conventions are:
//!
//! * uniform:               `log pi = 0`
//! * Stein:                 `log pi = -(d-2) log ||mu||`
//! * rescaled Stein:        `log pi = -(d-2) log ||S*^{-1/2} mu||`
//! * Gaussian ridge:        `log pi = (d/2) log(lambda/2pi) - lambda ||mu||^2 / 2`
//! * radial:                `log pi = log g(||mu - center||)`

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::SpdMatrix;

/// Radial profile function for [`Prior::Radial`], given as `r -> g(r)` or
/// `r -> log g(r)` depending on the constructor.
pub type RadialFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Prior over the mean parameter of a `d`-dimensional Normal model.
#[derive(Clone)]
pub enum Prior {
    /// Improper flat prior `pi(mu) = 1`.
    Uniform { dim: usize },
    /// Stein prior `||mu||^{-(d-2)}`; requires `d >= 3`.
    Stein { dim: usize },
    /// Stein prior composed with `S*^{-1/2}`; requires `d >= 3`.
    RescaledStein { sigma_star: SpdMatrix },
    /// Proper Gaussian prior `N(0, lambda^{-1} I)`.
    GaussianRidge { dim: usize, lambda: f64 },
    /// Rotation-invariant prior `g(||mu - center||)` around `center`;
    /// stored through its log-profile to stay finite at far field.
    Radial {
        dim: usize,
        log_g: RadialFn,
        center: DVector<f64>,
        /// Declares `g` nonincreasing in `r`; required by the rejection
        /// sampler, which bounds the marginal by its value at the center.
        nonincreasing: bool,
    },
}

impl fmt::Debug for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prior::Uniform { dim } => write!(f, "Uniform {{ dim: {dim} }}"),
            Prior::Stein { dim } => write!(f, "Stein {{ dim: {dim} }}"),
            Prior::RescaledStein { sigma_star } => {
                write!(f, "RescaledStein {{ dim: {} }}", sigma_star.dim())
            }
            Prior::GaussianRidge { dim, lambda } => {
                write!(f, "GaussianRidge {{ dim: {dim}, lambda: {lambda} }}")
            }
            Prior::Radial { dim, .. } => write!(f, "Radial {{ dim: {dim} }}"),
        }
    }
}

impl Prior {
    pub fn uniform(dim: usize) -> Self {
        Prior::Uniform { dim }
    }

    pub fn stein(dim: usize) -> Result<Self> {
        if dim < 3 {
            return Err(Error::SteinDimension { dim });
        }
        Ok(Prior::Stein { dim })
    }

    pub fn rescaled_stein(sigma_star: SpdMatrix) -> Result<Self> {
        if sigma_star.dim() < 3 {
            return Err(Error::SteinDimension {
                dim: sigma_star.dim(),
            });
        }
        Ok(Prior::RescaledStein { sigma_star })
    }

    pub fn gaussian_ridge(dim: usize, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: format!("must be positive and finite, got {lambda}"),
            });
        }
        Ok(Prior::GaussianRidge { dim, lambda })
    }

    pub fn radial(dim: usize, g: RadialFn, nonincreasing: bool) -> Self {
        Self::radial_centered(dim, g, DVector::zeros(dim), nonincreasing)
    }

    pub fn radial_centered(
        dim: usize,
        g: RadialFn,
        center: DVector<f64>,
        nonincreasing: bool,
    ) -> Self {
        let log_g: RadialFn = Arc::new(move |r| g(r).ln());
        Prior::Radial {
            dim,
            log_g,
            center,
            nonincreasing,
        }
    }

    /// Radial prior given directly by its log-profile `r -> log g(r)`;
    /// avoids underflow for light-tailed profiles.
    pub fn radial_from_log(dim: usize, log_g: RadialFn, nonincreasing: bool) -> Self {
        Prior::Radial {
            dim,
            log_g,
            center: DVector::zeros(dim),
            nonincreasing,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Prior::Uniform { dim }
            | Prior::Stein { dim }
            | Prior::GaussianRidge { dim, .. }
            | Prior::Radial { dim, .. } => *dim,
            Prior::RescaledStein { sigma_star } => sigma_star.dim(),
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self, Prior::Uniform { .. })
    }

    /// All shipped priors except pathological radial ones have radially
    /// nonincreasing marginals, which the rejection sampler relies on.
    pub fn is_radially_nonincreasing(&self) -> bool {
        match self {
            Prior::Uniform { .. }
            | Prior::Stein { .. }
            | Prior::RescaledStein { .. }
            | Prior::GaussianRidge { .. } => true,
            Prior::Radial { nonincreasing, .. } => *nonincreasing,
        }
    }
}

/// Log prior density, up to the variant's fixed additive constant.
///
/// Errors at the Stein pole `mu = 0`.
pub fn log_prior(prior: &Prior, mu: &DVector<f64>) -> Result<f64> {
    let d = prior.dim();
    if mu.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: mu.len(),
        });
    }
    match prior {
        Prior::Uniform { .. } => Ok(0.0),
        Prior::Stein { dim } => {
            let norm = mu.norm();
            if norm == 0.0 {
                return Err(Error::SteinPole);
            }
            Ok(-((*dim as f64) - 2.0) * norm.ln())
        }
        Prior::RescaledStein { sigma_star } => {
            let whitened = sigma_star.inv_sqrt() * mu;
            let norm = whitened.norm();
            if norm == 0.0 {
                return Err(Error::SteinPole);
            }
            Ok(-((d as f64) - 2.0) * norm.ln())
        }
        Prior::GaussianRidge { dim, lambda } => {
            let k = *dim as f64;
            Ok(0.5 * k * (lambda / (2.0 * std::f64::consts::PI)).ln()
                - 0.5 * lambda * mu.norm_squared())
        }
        Prior::Radial { log_g, center, .. } => {
            let r = (mu - center).norm();
            Ok(log_g(r))
        }
    }
}

/// The whitening factor `A* = S1^{1/2} U^T (Lambda^{-1} - I)^{1/2}` built from
/// a diagonalization `S1^{1/2} S2^{-1} S1^{1/2} = U^T Lambda U`.
///
/// Satisfies `A* A*^T = S2 - S1`. Columns whose eigenvalue equals 1 (within
/// `1e-9`) are zero; their count determines the rank of the difference.
#[derive(Debug, Clone)]
pub struct AstarMatrix {
    matrix: DMatrix<f64>,
    rank: usize,
    dim: usize,
}

impl AstarMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Rank of `S2 - S1`.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Set when `rank(S2 - S1) < 3`: no prior composed with this factor can
    /// be superharmonic, so downstream domination claims are void.
    pub fn rank_warning(&self) -> bool {
        self.rank < 3
    }
}

/// Eigenvalues of `Lambda` within this tolerance of 1 are treated as exactly
/// 1, zeroing the corresponding column of `A*`.
const ASTAR_UNIT_EIG_TOL: f64 = 1e-9;

/// Builds `A*` for an ordered pair `S1 <= S2` in the Loewner order.
pub fn build_astar(s1: &SpdMatrix, s2: &SpdMatrix) -> Result<AstarMatrix> {
    let d = s1.dim();
    if s2.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: s2.dim(),
        });
    }
    let diff = s2.entries() - s1.entries();
    let scale = s2.eigenvalues()[0];
    let min_eig = diff.clone().symmetric_eigen().eigenvalues.min();
    if min_eig < -1e-10 * scale {
        return Err(Error::LoewnerOrderViolated {
            min_eig: min_eig / scale,
        });
    }
    let w = s1.sqrt() * s2.inverse() * s1.sqrt();
    let (lambdas, vectors) = {
        let eig = ((&w + w.transpose()) * 0.5).symmetric_eigen();
        (eig.eigenvalues, eig.eigenvectors)
    };
    let mut factor = DMatrix::zeros(d, d);
    let mut rank = 0;
    for k in 0..d {
        let lam = lambdas[k];
        if (lam - 1.0).abs() < ASTAR_UNIT_EIG_TOL {
            continue; // zero column
        }
        let scale_k = (1.0 / lam - 1.0).sqrt();
        factor.set_column(k, &(vectors.column(k) * scale_k));
        rank += 1;
    }
    let matrix = s1.sqrt() * factor;
    Ok(AstarMatrix { matrix, rank, dim: d })
}

/// Evaluates both sides of the rescaled-Stein identity
/// `pi_{S; S2-S1}(A* mu) = pi_S(mu)` and returns the two log values.
///
/// Requires `S2 - S1` to be full rank so that `(S2 - S1)^{-1/2}` exists.
pub fn rescaled_stein_identity_check(
    s1: &SpdMatrix,
    s2: &SpdMatrix,
    mu: &DVector<f64>,
) -> Result<(f64, f64)> {
    let astar = build_astar(s1, s2)?;
    if astar.rank() < s1.dim() {
        return Err(Error::RankDeficientDifference {
            rank: astar.rank(),
            need: s1.dim(),
        });
    }
    let diff = SpdMatrix::new(s2.entries() - s1.entries())?;
    let prior = Prior::rescaled_stein(diff)?;
    let lhs = log_prior(&prior, &(astar.matrix() * mu))?;
    let rhs = log_prior(&Prior::stein(s1.dim())?, mu)?;
    Ok((lhs, rhs))
}

/// Discrete Laplacian of the prior *density* (not its log) at each point:
/// `sum_i [pi(mu + h e_i) + pi(mu - h e_i) - 2 pi(mu)] / h^2`.
///
/// Nonpositive values indicate superharmonicity at that point. Points must
/// keep a distance of at least `10 h` from the Stein pole.
pub fn superharmonicity_check(
    prior: &Prior,
    points: &[DVector<f64>],
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::NonPositiveStep { step: h });
    }
    let d = prior.dim();
    let density = |mu: &DVector<f64>| -> Result<f64> { Ok(log_prior(prior, mu)?.exp()) };
    let mut out = Vec::with_capacity(points.len());
    for mu in points {
        if matches!(prior, Prior::Stein { .. } | Prior::RescaledStein { .. })
            && mu.norm() < 10.0 * h
        {
            return Err(Error::InvalidParameter {
                name: "points",
                reason: format!("point at distance {} from the Stein pole; need >= 10 h", mu.norm()),
            });
        }
        let center = density(mu)?;
        let mut lap = 0.0;
        for i in 0..d {
            let mut plus = mu.clone();
            plus[i] += h;
            let mut minus = mu.clone();
            minus[i] -= h;
            lap += density(&plus)? + density(&minus)? - 2.0 * center;
        }
        out.push(lap / (h * h));
    }
    Ok(out)
}
