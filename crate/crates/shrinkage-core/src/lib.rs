//! Bayesian shrinkage prediction for multivariate Normal models whose future
//! covariance differs from the training covariance.
//!
//! Observed data `y ~ N_d(mu, Sigma)` with known `Sigma`; a future sample
//! `y~ ~ N_d(mu, Sigma~)` shares the mean but may have a different, even
//! rank-deficient, covariance. The crate provides:
//!
//! * the linear-algebra and Gaussian substrate, including the combined
//!   statistic `(w, Sigma_w)` and Moore-Penrose handling of semi-definite
//!   future covariances ([`gaussian`], [`matrix`]);
//! * the shrinkage prior family and the `A*` whitening construction
//!   ([`prior`]);
//! * marginal densities `m_pi(z; C)`, their gradients, and posterior means
//!   ([`marginal`]);
//! * Bayesian predictive densities through the ratio formula
//!   `p_pi = p_I m(w; Sigma_w) / m(y; Sigma)`, with an exact rejection
//!   sampler ([`predictive`]);
//! * Monte Carlo Kullback-Leibler risk estimators and covariance ensembles
//!   ([`risk`]);
//! * the reduction of Normal linear regression to this model ([`regression`]);
//! * deterministic seed-substream derivation for parallel experiments
//!   ([`seedstream`]).

pub mod error;
pub mod gaussian;
pub mod marginal;
pub mod matrix;
pub mod predictive;
pub mod prior;
pub mod quad;
pub mod regression;
pub mod risk;
pub mod seedstream;

pub use error::{Error, Result};
pub use gaussian::{
    combine, combine_cov, gaussian_kl, mvn_logpdf, mvn_sample, psd_mvn_support_logpdf,
    semidefinite_normal_sample, uniform_predictive_logpdf, CombinedStat,
};
pub use marginal::{
    log_marginal_mc_oracle, posterior_mean, MarginalEvaluator, MarginalMcEstimate, MarginalMethod,
};
pub use matrix::{PsdMatrix, SpdMatrix};
pub use predictive::{plugin_logpdf, PredictiveDensity};
pub use prior::{
    build_astar, log_prior, rescaled_stein_identity_check, superharmonicity_check, AstarMatrix,
    Prior,
};
pub use regression::{
    astar_regression_prior, reduce, reduce_future, regression_predictive_logpdf, ridge_estimator,
    FutureDesign, FutureReduction, ReducedProblem, RegressionData, RegressionPredictive,
};
pub use risk::{
    bayes_risk_difference, direct_risk, phi_estimate, risk_difference, CovarianceEnsemble,
    DesignDistribution, PredictiveSpec, PriorSpec, RiskEstimate, RiskQuantity,
};
pub use seedstream::seed_substream;
