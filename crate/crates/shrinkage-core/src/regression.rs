//! Reduction of the Normal linear regression problem to the Normal-model
//! problem, end-to-end regression predictive densities, and the ridge
//! estimator.
//!
//! The model is `y = X^T beta + eps`, `eps ~ N_p(0, sigma^2 I_p)` with a
//! `d x p` design `X` whose columns are samples. The statistic
//! `y_1 = (X X^T)^{-1} X y` is sufficient, the MLE, and the least-squares
//! estimate; the reduced model is `y_1 ~ N_d(beta, Sigma)` with
//! `Sigma = sigma^2 (X X^T)^{-1}`. The future design reduces through the
//! Moore-Penrose pseudo-inverse: `y~_1 = (X~ X~^T)^dagger X~ y~` and
//! `Sigma~ = sigma~^2 (X~ X~^T)^dagger`, valid at any rank.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::combine_cov;
use crate::matrix::{PsdMatrix, SpdMatrix};
use crate::predictive::PredictiveDensity;
use crate::prior::{build_astar, AstarMatrix, Prior};

/// Hard cap on the condition number of `X X^T`; near-singular designs error
/// out instead of silently inverting.
pub const CONDITION_NUMBER_CAP: f64 = 1e12;

/// Training data for the regression problem.
#[derive(Debug, Clone)]
pub struct RegressionData {
    x: DMatrix<f64>,
    y: DVector<f64>,
    noise_var: f64,
}

impl RegressionData {
    /// `x` is `d x p` with samples as columns; requires `p >= d`.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, noise_var: f64) -> Result<Self> {
        let (d, p) = (x.nrows(), x.ncols());
        if y.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: y.len(),
            });
        }
        if p < d {
            return Err(Error::InvalidParameter {
                name: "x",
                reason: format!("need p >= d samples, got p = {p}, d = {d}"),
            });
        }
        if !(noise_var > 0.0) {
            return Err(Error::InvalidParameter {
                name: "noise_var",
                reason: format!("must be positive, got {noise_var}"),
            });
        }
        Ok(Self { x, y, noise_var })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    /// Copy with a constant coordinate 1 appended to every sample: the
    /// intercept model `y = X^T beta + beta_0 + eps`.
    pub fn with_intercept(&self) -> Result<Self> {
        let (d, p) = (self.x.nrows(), self.x.ncols());
        let mut x = DMatrix::zeros(d + 1, p);
        x.view_mut((0, 0), (d, p)).copy_from(&self.x);
        for j in 0..p {
            x[(d, j)] = 1.0;
        }
        Self::new(x, self.y.clone(), self.noise_var)
    }
}

/// Future explanatory variables; neither `p~ >= d` nor full rank is required.
#[derive(Debug, Clone)]
pub struct FutureDesign {
    x_tilde: DMatrix<f64>,
    noise_var: f64,
}

impl FutureDesign {
    pub fn new(x_tilde: DMatrix<f64>, noise_var: f64) -> Result<Self> {
        if !(noise_var > 0.0) {
            return Err(Error::InvalidParameter {
                name: "noise_var",
                reason: format!("must be positive, got {noise_var}"),
            });
        }
        if !x_tilde.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "x_tilde",
                reason: "entries must be finite".to_string(),
            });
        }
        Ok(Self { x_tilde, noise_var })
    }

    /// Single future point `x~` as a one-column design.
    pub fn single_point(x_tilde: DVector<f64>, noise_var: f64) -> Result<Self> {
        let d = x_tilde.len();
        Self::new(DMatrix::from_columns(&[x_tilde]), noise_var).and_then(|fd| {
            let _ = d;
            Ok(fd)
        })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.x_tilde
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }
}

/// Result of the training-side reduction.
#[derive(Debug, Clone)]
pub struct ReducedProblem {
    pub y1: DVector<f64>,
    pub sigma: SpdMatrix,
    /// Condition number of `X X^T`, reported for diagnostics.
    pub gram_condition: f64,
}

/// `(y_1, Sigma) = ((X X^T)^{-1} X y, sigma^2 (X X^T)^{-1})`.
pub fn reduce(data: &RegressionData) -> Result<ReducedProblem> {
    let gram = SpdMatrix::new(&data.x * data.x.transpose()).map_err(|e| match e {
        Error::NotPositiveDefinite { .. } => Error::IllConditionedDesign {
            cond: f64::INFINITY,
            cap: CONDITION_NUMBER_CAP,
        },
        other => other,
    })?;
    let cond = gram.condition_number();
    if cond > CONDITION_NUMBER_CAP {
        return Err(Error::IllConditionedDesign {
            cond,
            cap: CONDITION_NUMBER_CAP,
        });
    }
    let y1 = gram.inverse() * (&data.x * &data.y);
    let sigma = SpdMatrix::new(gram.inverse() * data.noise_var)?;
    Ok(ReducedProblem {
        y1,
        sigma,
        gram_condition: cond,
    })
}

/// Result of the future-side reduction: the statistic map and the reduced
/// covariance.
#[derive(Debug, Clone)]
pub struct FutureReduction {
    /// `(X~ X~^T)^dagger X~`, the `d x p~` map from future targets to the
    /// statistic `y~_1`.
    map: DMatrix<f64>,
    pub sigma_tilde: PsdMatrix,
    x_tilde: DMatrix<f64>,
}

impl FutureReduction {
    /// `y~_1 = (X~ X~^T)^dagger X~ y~`.
    pub fn statistic(&self, y_tilde: &DVector<f64>) -> DVector<f64> {
        &self.map * y_tilde
    }

    /// Norm of the component of `y~` orthogonal to the fitted values
    /// `X~^T y~_1`; the part carried by the prior-independent residual
    /// factor.
    pub fn projection_residual(&self, y_tilde: &DVector<f64>) -> f64 {
        (y_tilde - self.x_tilde.transpose() * self.statistic(y_tilde)).norm()
    }
}

/// `Sigma~ = sigma~^2 (X~ X~^T)^dagger` and the statistic map; errors on an
/// all-zero future design.
pub fn reduce_future(fd: &FutureDesign) -> Result<FutureReduction> {
    let gram = &fd.x_tilde * fd.x_tilde.transpose();
    if gram.amax() == 0.0 {
        return Err(Error::ZeroFutureDesign);
    }
    let gram = PsdMatrix::new(gram)?;
    let sigma_tilde = PsdMatrix::new(gram.pseudo_inverse() * fd.noise_var)?;
    let map = gram.pseudo_inverse() * &fd.x_tilde;
    Ok(FutureReduction {
        map,
        sigma_tilde,
        x_tilde: fd.x_tilde.clone(),
    })
}

/// Regression predictive log-density together with the projection residual
/// of the evaluated point.
#[derive(Debug, Clone, Copy)]
pub struct RegressionPredictive {
    /// `log q_pi(y~_1 | y_1)` evaluated at the reduced statistic; the
    /// orthogonal-residual factor is prior independent and omitted.
    pub log_density: f64,
    pub projection_residual: f64,
}

/// Evaluates the reduced-model predictive on the future statistic.
pub fn regression_predictive_logpdf(
    data: &RegressionData,
    fd: &FutureDesign,
    prior: &Prior,
    y_tilde: &DVector<f64>,
) -> Result<RegressionPredictive> {
    let reduced = reduce(data)?;
    let future = reduce_future(fd)?;
    let pd = PredictiveDensity::new(
        reduced.y1,
        reduced.sigma,
        future.sigma_tilde.clone(),
        prior.clone(),
    )?;
    let stat = future.statistic(y_tilde);
    Ok(RegressionPredictive {
        log_density: pd.logpdf(&stat)?,
        projection_residual: future.projection_residual(y_tilde),
    })
}

/// Ridge regression estimator `(X X^T + lambda I)^{-1} X y`.
pub fn ridge_estimator(data: &RegressionData, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter {
            name: "lambda",
            reason: format!("must be positive, got {lambda}"),
        });
    }
    let d = data.x.nrows();
    let gram = &data.x * data.x.transpose() + DMatrix::identity(d, d) * lambda;
    let reg = SpdMatrix::new(gram)?;
    Ok(reg.inverse() * (&data.x * &data.y))
}

/// The future-covariance-adapted prior of the regression problem:
/// `RescaledStein(Sigma - Sigma_w)` with the `A*` factor attached for audit.
///
/// Requires `rank(Sigma - Sigma_w) >= 3`, i.e. at least three informative
/// future directions; the rescaled-Stein construction additionally needs the
/// difference to be full rank.
pub fn astar_regression_prior(
    data: &RegressionData,
    fd: &FutureDesign,
) -> Result<(Prior, AstarMatrix)> {
    let reduced = reduce(data)?;
    let future = reduce_future(fd)?;
    let sigma_w = combine_cov(&reduced.sigma, &future.sigma_tilde)?;
    let diff = PsdMatrix::new(reduced.sigma.entries() - sigma_w.entries())?;
    if diff.rank() < 3 {
        return Err(Error::RankDeficientDifference {
            rank: diff.rank(),
            need: 3,
        });
    }
    if !diff.is_full_rank() {
        return Err(Error::RankDeficientDifference {
            rank: diff.rank(),
            need: diff.dim(),
        });
    }
    let astar = build_astar(&sigma_w, &reduced.sigma)?;
    let prior = Prior::rescaled_stein(diff.to_spd()?)?;
    Ok((prior, astar))
}
