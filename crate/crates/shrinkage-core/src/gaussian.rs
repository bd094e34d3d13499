//! Gaussian density substrate: the combined statistic `(w, Sigma_w)`, the
//! uniform-prior predictive, Gaussian KL divergence, and sampling with
//! (semi-)definite covariances.
//!
//! The combined statistic comes from the product identity
//!
//! ```text
//! N(y; mu, Sigma) N(y~; mu, Sigma~)
//!   = N(w; mu, Sigma_w) * N(y~; y, Sigma + Sigma~) * const
//! ```
//!
//! with `Sigma_w = (Sigma^-1 + Sigma~^-1)^-1` and
//! `w = Sigma_w (Sigma^-1 y + Sigma~^-1 y~)`. A rank-deficient future
//! covariance uses the Moore-Penrose pseudo-inverse in both formulas, which is
//! the distributional limit of `Sigma~ + eps I` as `eps -> 0`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::{PsdMatrix, SpdMatrix};

pub const LN_2PI: f64 = 1.8378770664093453;

/// Combined mean statistic and its covariance.
#[derive(Debug, Clone)]
pub struct CombinedStat {
    pub w: DVector<f64>,
    pub sigma_w: SpdMatrix,
}

/// `Sigma_w = (Sigma^-1 + Sigma~^dagger)^-1`.
///
/// Lies strictly below `Sigma` in the Loewner order on the support of
/// `Sigma~`.
pub fn combine_cov(sigma: &SpdMatrix, sigma_tilde: &PsdMatrix) -> Result<SpdMatrix> {
    if sigma.dim() != sigma_tilde.dim() {
        return Err(Error::DimensionMismatch {
            expected: sigma.dim(),
            got: sigma_tilde.dim(),
        });
    }
    let precision = sigma.inverse() + sigma_tilde.pseudo_inverse();
    let prec = SpdMatrix::new(precision)?;
    SpdMatrix::new(prec.inverse().clone())
}

/// Combined statistic `(w, Sigma_w)` for training data `y` and future data
/// `y~`.
pub fn combine(
    sigma: &SpdMatrix,
    sigma_tilde: &PsdMatrix,
    y: &DVector<f64>,
    y_tilde: &DVector<f64>,
) -> Result<CombinedStat> {
    let d = sigma.dim();
    if y.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: y.len(),
        });
    }
    if y_tilde.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: y_tilde.len(),
        });
    }
    let sigma_w = combine_cov(sigma, sigma_tilde)?;
    let rhs = sigma.inverse() * y + sigma_tilde.pseudo_inverse() * y_tilde;
    let w = sigma_w.entries() * rhs;
    Ok(CombinedStat { w, sigma_w })
}

/// Log-density of `N_d(x; mean, cov)` for definite covariance.
pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &SpdMatrix) -> f64 {
    let d = cov.dim() as f64;
    let diff = x - mean;
    -0.5 * (d * LN_2PI + cov.log_det() + cov.inv_quad_form(&diff))
}

/// Log-density of the semi-definite Normal on its support,
/// `-(k/2) log 2pi - (1/2) log|L^T L| - (1/2) (x-mean)^T cov^dagger (x-mean)`.
///
/// Off-support components of `x - mean` are ignored; they belong to the delta
/// factors of the distribution.
pub fn psd_mvn_support_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &PsdMatrix) -> f64 {
    let k = cov.rank() as f64;
    let diff = x - mean;
    -0.5 * (k * LN_2PI + cov.pseudo_log_det() + cov.pinv_quad_form(&diff))
}

/// `log p_I(y~ | y) = log N_d(y~; y, Sigma + Sigma~)`, the Bayesian predictive
/// density under the uniform prior.
pub fn uniform_predictive_logpdf(
    y_tilde: &DVector<f64>,
    y: &DVector<f64>,
    sigma: &SpdMatrix,
    sigma_tilde: &PsdMatrix,
) -> Result<f64> {
    let total = SpdMatrix::new(sigma.entries() + sigma_tilde.entries())?;
    Ok(mvn_logpdf(y_tilde, y, &total))
}

/// KL divergence `D(N(mu1, s1) || N(mu2, s2))` with definite `s2`.
///
/// For rank-deficient `s1` the divergence is computed on the support of `s1`:
/// both Gaussians are restricted to the affine subspace `mu1 + range(s1)`.
/// A mean mismatch along a null direction of `s1` makes the divergence
/// infinite and is reported as an error.
pub fn gaussian_kl(
    mu1: &DVector<f64>,
    s1: &PsdMatrix,
    mu2: &DVector<f64>,
    s2: &SpdMatrix,
) -> Result<f64> {
    let d = s2.dim();
    if s1.dim() != d || mu1.len() != d || mu2.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: s1.dim(),
        });
    }
    let diff = mu2 - mu1;
    if s1.is_full_rank() {
        let trace = (s2.inverse() * s1.entries()).trace();
        let quad = s2.inv_quad_form(&diff);
        let log_det_ratio = s2.log_det() - s1.pseudo_log_det();
        return Ok(0.5 * (trace - d as f64 + quad + log_det_ratio));
    }
    // Support-restricted divergence. Null-direction mean mismatch carries an
    // infinite penalty that has no finite representation.
    let null_mismatch = s1.null_basis().transpose() * &diff;
    let scale = s1.eigenvalues()[0].sqrt().max(1.0);
    if null_mismatch.amax() > 1e-8 * scale {
        return Err(Error::IncompatibleSupports {
            mismatch: null_mismatch.amax(),
        });
    }
    let k = s1.rank();
    let mut basis = DMatrix::zeros(d, k);
    for c in 0..k {
        basis.set_column(c, &s1.eigenvectors().column(c));
    }
    let s1_r = basis.transpose() * s1.entries() * &basis;
    let s2_r = basis.transpose() * s2.entries() * &basis;
    let diff_r = basis.transpose() * diff;
    let s1_r = SpdMatrix::new(s1_r)?;
    let s2_r = SpdMatrix::new(s2_r)?;
    let trace = (s2_r.inverse() * s1_r.entries()).trace();
    let quad = s2_r.inv_quad_form(&diff_r);
    Ok(0.5 * (trace - k as f64 + quad + s2_r.log_det() - s1_r.log_det()))
}

/// Draws `mean + S^{1/2} xi` with `xi ~ N(0, I_d)`.
pub fn mvn_sample<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &SpdMatrix, rng: &mut R) -> DVector<f64> {
    let xi = standard_normal_vector(cov.dim(), rng);
    mean + cov.sqrt() * xi
}

/// Draws from the semi-definite Normal: `mean + L z` with `z ~ N(0, I_k)`.
///
/// Samples lie in `mean + range(L)` exactly; null-space coordinates of the
/// sample equal those of `mean`.
pub fn semidefinite_normal_sample<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &PsdMatrix,
    rng: &mut R,
) -> DVector<f64> {
    let z = standard_normal_vector(cov.rank(), rng);
    mean + cov.support_factor() * z
}

pub fn standard_normal_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}
