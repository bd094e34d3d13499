//! Monte Carlo estimation of Kullback-Leibler risk, the phi-based
//! risk-difference identity, and partial Bayes risk over rotation-invariant
//! covariance ensembles.
//!
//! The workhorse identity is
//!
//! ```text
//! R_KL(pi, mu) - R_KL(pi_I, mu) = phi_pi(mu, Sigma) - phi_pi(mu, Sigma_w)
//! ```
//!
//! with `phi_pi(mu, C) = E_{z ~ N(mu, C)} log m_pi(z; C)`; one Monte Carlo
//! layer instead of the nested integral of the risk definition. The nested
//! estimator ([`direct_risk`]) stays as the validation oracle and as the
//! cheap path for predictives with closed-form inner KL (uniform, ridge,
//! plug-in).
//!
//! Estimators draw through caller-provided RNGs and use common random
//! numbers across the two covariance arguments, so the uniform prior yields
//! a bit-exact zero risk difference.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution};

use crate::error::{Error, Result};
use crate::gaussian::{
    combine_cov, gaussian_kl, psd_mvn_support_logpdf, semidefinite_normal_sample,
    standard_normal_vector,
};
use crate::marginal::MarginalEvaluator;
use crate::matrix::{PsdMatrix, SpdMatrix};
use crate::predictive::PredictiveDensity;
use crate::prior::Prior;

/// Tag describing which quantity a [`RiskEstimate`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskQuantity {
    Risk,
    RiskDifference,
    BayesRiskDifference,
}

/// Monte Carlo mean, standard error, and replication count.
#[derive(Debug, Clone, Copy)]
pub struct RiskEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
    pub quantity: RiskQuantity,
}

fn aggregate(values: &[f64], quantity: RiskQuantity) -> Result<RiskEstimate> {
    let n = values.len();
    if n < 2 {
        return Err(Error::TooFewReplications { n, min: 2 });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    Ok(RiskEstimate {
        mean,
        std_error: (var / n as f64).sqrt(),
        n,
        quantity,
    })
}

/// Prior specification for ensemble sweeps: either a fixed prior or the
/// rescaled Stein prior `pi_Sigma` re-built from each drawn training
/// covariance.
#[derive(Debug, Clone)]
pub enum PriorSpec {
    Fixed(Prior),
    /// `pi_Sigma = pi_S(Sigma^{-1/2} mu)` with `Sigma` the drawn training
    /// covariance.
    TrainCovRescaledStein,
}

impl PriorSpec {
    pub fn resolve(&self, sigma: &SpdMatrix) -> Result<Prior> {
        match self {
            PriorSpec::Fixed(p) => Ok(p.clone()),
            PriorSpec::TrainCovRescaledStein => Prior::rescaled_stein(sigma.clone()),
        }
    }
}

/// Which predictive density [`direct_risk`] evaluates.
#[derive(Debug, Clone)]
pub enum PredictiveSpec {
    Bayes(Prior),
    /// Plug-in of the MLE: `N(y~; y, Sigma~)`.
    PlugIn,
}

/// Generator of random covariance matrices, rotation invariant in
/// distribution.
#[derive(Debug, Clone)]
pub enum CovarianceEnsemble {
    /// `W(I_d, df) / df`; mean is the identity. Bartlett sampling requires
    /// `df > d - 1`.
    WishartIdentity { df: f64 },
    /// `noise_var * (X X^T)^dagger` for a `d x cols` design `X` with i.i.d.
    /// entries; rank deficient when `cols < d`.
    DesignInduced {
        design: DesignDistribution,
        noise_var: f64,
        cols: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignDistribution {
    StdNormalEntries,
    UniformPm1,
}

impl DesignDistribution {
    pub fn sample_entry<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DesignDistribution::StdNormalEntries => rng.sample(rand_distr::StandardNormal),
            DesignDistribution::UniformPm1 => rng.random_range(-1.0..1.0),
        }
    }

    pub fn sample_matrix<R: Rng + ?Sized>(
        &self,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(rows, cols, |_, _| self.sample_entry(rng))
    }
}

/// Smallest integer Wishart degrees of freedom with finite inverse moments,
/// `d + 2`.
pub fn default_wishart_df(d: usize) -> f64 {
    (d + 2) as f64
}

impl CovarianceEnsemble {
    /// Draws a covariance; may be rank deficient for `DesignInduced` with
    /// `cols < d`.
    pub fn sample_psd<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Result<PsdMatrix> {
        match self {
            CovarianceEnsemble::WishartIdentity { df } => {
                Ok(wishart_identity(d, *df, rng)?.to_psd())
            }
            CovarianceEnsemble::DesignInduced {
                design,
                noise_var,
                cols,
            } => {
                if *cols == 0 {
                    return Err(Error::ZeroFutureDesign);
                }
                let x = design.sample_matrix(d, *cols, rng);
                let gram = PsdMatrix::new(&x * x.transpose())?;
                PsdMatrix::new(gram.pseudo_inverse() * *noise_var)
            }
        }
    }

    /// Draws a strictly definite covariance; fails when the draw is rank
    /// deficient.
    pub fn sample_spd<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Result<SpdMatrix> {
        self.sample_psd(d, rng)?.to_spd()
    }
}

/// `W(I_d, df) / df` through the Bartlett decomposition.
pub fn wishart_identity<R: Rng + ?Sized>(d: usize, df: f64, rng: &mut R) -> Result<SpdMatrix> {
    if !(df > (d as f64) - 1.0) {
        return Err(Error::InvalidParameter {
            name: "df",
            reason: format!("Wishart degrees of freedom {df} must exceed d - 1 = {}", d - 1),
        });
    }
    let mut a = nalgebra::DMatrix::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(df - i as f64).map_err(|e| Error::InvalidParameter {
            name: "df",
            reason: e.to_string(),
        })?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(rand_distr::StandardNormal);
        }
    }
    let w = &a * a.transpose() / df;
    SpdMatrix::new(w)
}

/// `phi_pi(mu, C) = E_{z ~ N(mu, C)} log m_pi(z; C)` by plain Monte Carlo.
pub fn phi_estimate<R: Rng + ?Sized>(
    prior: &Prior,
    mu: &DVector<f64>,
    cov: &SpdMatrix,
    n: usize,
    rng: &mut R,
) -> Result<RiskEstimate> {
    let ev = MarginalEvaluator::auto(prior.clone(), cov.clone())?;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let z = mu + cov.sqrt() * standard_normal_vector(cov.dim(), rng);
        values.push(ev.log_marginal(&z)?);
    }
    aggregate(&values, RiskQuantity::Risk)
}

/// `R_KL(pi, mu) - R_KL(pi_I, mu) = phi_pi(mu, Sigma) - phi_pi(mu, Sigma_w)`
/// with common random numbers across the two covariances.
///
/// Negative values mean the prior improves on the uniform one.
pub fn risk_difference<R: Rng + ?Sized>(
    prior: &Prior,
    mu: &DVector<f64>,
    sigma: &SpdMatrix,
    sigma_tilde: &PsdMatrix,
    n: usize,
    rng: &mut R,
) -> Result<RiskEstimate> {
    let sigma_w = combine_cov(sigma, sigma_tilde)?;
    let ev_sigma = MarginalEvaluator::auto(prior.clone(), sigma.clone())?;
    let ev_sigma_w = MarginalEvaluator::auto(prior.clone(), sigma_w.clone())?;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = standard_normal_vector(sigma.dim(), rng);
        let z = mu + sigma.sqrt() * &xi;
        let z_w = mu + sigma_w.sqrt() * &xi;
        values.push(ev_sigma.log_marginal(&z)? - ev_sigma_w.log_marginal(&z_w)?);
    }
    let mut est = aggregate(&values, RiskQuantity::RiskDifference)?;
    est.quantity = RiskQuantity::RiskDifference;
    Ok(est)
}

/// Nested Monte Carlo estimate of `R_KL` from its definition: outer draws
/// `y ~ N(mu, Sigma)`, inner KL `D(N(mu, Sigma~) || p_hat(. | y))`.
///
/// The inner divergence is closed form whenever the predictive is Gaussian
/// (uniform prior, Gaussian ridge, plug-in); otherwise it is an inner Monte
/// Carlo average over `y~ ~ N(mu, Sigma~)`. The standard error uses the
/// outer replication variance only.
pub fn direct_risk<R: Rng + ?Sized>(
    spec: &PredictiveSpec,
    mu: &DVector<f64>,
    sigma: &SpdMatrix,
    sigma_tilde: &PsdMatrix,
    n_outer: usize,
    n_inner: usize,
    rng: &mut R,
) -> Result<RiskEstimate> {
    let d = sigma.dim();
    let mut values = Vec::with_capacity(n_outer);
    match spec {
        PredictiveSpec::PlugIn => {
            for _ in 0..n_outer {
                let y = mu + sigma.sqrt() * standard_normal_vector(d, rng);
                let diff = &y - mu;
                values.push(0.5 * sigma_tilde.pinv_quad_form(&diff));
            }
        }
        PredictiveSpec::Bayes(Prior::Uniform { .. }) => {
            let total = SpdMatrix::new(sigma.entries() + sigma_tilde.entries())?;
            for _ in 0..n_outer {
                let y = mu + sigma.sqrt() * standard_normal_vector(d, rng);
                values.push(gaussian_kl(mu, sigma_tilde, &y, &total)?);
            }
        }
        PredictiveSpec::Bayes(Prior::GaussianRidge { lambda, .. }) => {
            // conjugate predictive N(V_n Sigma^{-1} y, Sigma~ + V_n)
            let precision =
                SpdMatrix::new(sigma.inverse() + nalgebra::DMatrix::identity(d, d) * *lambda)?;
            let v_n = SpdMatrix::new(precision.inverse().clone())?;
            let pred_cov = SpdMatrix::new(sigma_tilde.entries() + v_n.entries())?;
            let gain = v_n.entries() * sigma.inverse();
            for _ in 0..n_outer {
                let y = mu + sigma.sqrt() * standard_normal_vector(d, rng);
                let m_n = &gain * y;
                values.push(gaussian_kl(mu, sigma_tilde, &m_n, &pred_cov)?);
            }
        }
        PredictiveSpec::Bayes(prior) => {
            for _ in 0..n_outer {
                let y = mu + sigma.sqrt() * standard_normal_vector(d, rng);
                let pd = PredictiveDensity::new(
                    y,
                    sigma.clone(),
                    sigma_tilde.clone(),
                    prior.clone(),
                )?;
                let mut inner = 0.0;
                for _ in 0..n_inner {
                    let yt = semidefinite_normal_sample(mu, sigma_tilde, rng);
                    inner += psd_mvn_support_logpdf(&yt, mu, sigma_tilde) - pd.logpdf(&yt)?;
                }
                values.push(inner / n_inner as f64);
            }
        }
    }
    aggregate(&values, RiskQuantity::Risk)
}

/// Exact per-pair uniform-prior risk `R_KL(pi_I) = (1/2) log
/// |Sigma + Sigma~| / |Sigma~|`; the inner KL and the outer expectation both
/// integrate in closed form.
pub fn uniform_risk_exact(sigma: &SpdMatrix, sigma_tilde: &SpdMatrix) -> Result<f64> {
    let total = SpdMatrix::new(sigma.entries() + sigma_tilde.entries())?;
    Ok(0.5 * (total.log_det() - sigma_tilde.log_det()))
}

/// Exact per-pair plug-in risk `(1/2) tr(Sigma~^dagger Sigma)`.
pub fn plugin_risk_exact(sigma: &SpdMatrix, sigma_tilde: &PsdMatrix) -> f64 {
    0.5 * (sigma_tilde.pseudo_inverse() * sigma.entries()).trace()
}

/// Exact per-pair ridge risk: `E_y D(N(mu, Sigma~) || N(V_n Sigma^{-1} y,
/// Sigma~ + V_n))` in closed form.
pub fn ridge_risk_exact(
    mu: &DVector<f64>,
    sigma: &SpdMatrix,
    sigma_tilde: &SpdMatrix,
    lambda: f64,
) -> Result<f64> {
    let d = sigma.dim();
    let precision = SpdMatrix::new(sigma.inverse() + nalgebra::DMatrix::identity(d, d) * lambda)?;
    let v_n = SpdMatrix::new(precision.inverse().clone())?;
    let pred_cov = SpdMatrix::new(sigma_tilde.entries() + v_n.entries())?;
    let k = pred_cov.inverse();
    let trace = (k * sigma_tilde.entries()).trace();
    // E (m_n - mu) = -lambda V_n mu; Cov(m_n) = V_n Sigma^{-1} V_n
    let bias = v_n.entries() * mu * lambda;
    let quad_bias = (k * &bias).dot(&bias);
    let noise = v_n.entries() * sigma.inverse() * v_n.entries();
    let quad_noise = (k * noise).trace();
    let log_det = pred_cov.log_det() - sigma_tilde.log_det();
    Ok(0.5 * (trace - d as f64 + quad_bias + quad_noise + log_det))
}

/// Exact per-pair risk of the plug-in density at the ridge posterior mean,
/// `N(y~; m_n, Sigma~)` with `m_n = (Sigma^{-1} + lambda I)^{-1} Sigma^{-1}
/// y`: the ridge point estimate carrying only the future noise, no posterior
/// spread.
pub fn ridge_plugin_risk_exact(
    mu: &DVector<f64>,
    sigma: &SpdMatrix,
    sigma_tilde: &SpdMatrix,
    lambda: f64,
) -> Result<f64> {
    let d = sigma.dim();
    let precision = SpdMatrix::new(sigma.inverse() + nalgebra::DMatrix::identity(d, d) * lambda)?;
    let v_n = precision.inverse();
    // bias -lambda V mu, estimator covariance V Sigma^{-1} V
    let bias = v_n * mu * lambda;
    let quad_bias = sigma_tilde.inv_quad_form(&bias);
    let noise = v_n * sigma.inverse() * v_n;
    let quad_noise = (sigma_tilde.inverse() * noise).trace();
    Ok(0.5 * (quad_bias + quad_noise))
}

/// Bayes risk difference over rotation-invariant covariance ensembles:
/// draws `(Sigma, Sigma~)` pairs and one common-random-number `z` pair per
/// replication, averaging `log m(z; Sigma) - log m(z_w; Sigma_w)`.
pub fn bayes_risk_difference<R: Rng + ?Sized>(
    prior: &PriorSpec,
    mu: &DVector<f64>,
    ensemble_sigma: &CovarianceEnsemble,
    ensemble_tilde: &CovarianceEnsemble,
    n: usize,
    rng: &mut R,
) -> Result<RiskEstimate> {
    let d = mu.len();
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let sigma = ensemble_sigma.sample_spd(d, rng)?;
        let sigma_tilde = ensemble_tilde.sample_psd(d, rng)?;
        let resolved = prior.resolve(&sigma)?;
        let sigma_w = combine_cov(&sigma, &sigma_tilde)?;
        let ev_sigma = MarginalEvaluator::auto(resolved.clone(), sigma.clone())?;
        let ev_sigma_w = MarginalEvaluator::auto(resolved, sigma_w.clone())?;
        let xi = standard_normal_vector(d, rng);
        let z = mu + sigma.sqrt() * &xi;
        let z_w = mu + sigma_w.sqrt() * &xi;
        values.push(ev_sigma.log_marginal(&z)? - ev_sigma_w.log_marginal(&z_w)?);
    }
    let mut est = aggregate(&values, RiskQuantity::BayesRiskDifference)?;
    est.quantity = RiskQuantity::BayesRiskDifference;
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::testutil::random_spd;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn e1(d: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        v[0] = 1.0;
        v
    }

    #[test]
    fn phi_uniform_is_exactly_zero() {
        let mut rng = StdRng::seed_from_u64(1);
        let est = phi_estimate(
            &Prior::uniform(3),
            &DVector::zeros(3),
            &SpdMatrix::identity(3),
            100,
            &mut rng,
        )
        .unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn phi_ridge_matches_closed_form() {
        // E log N(z; 0, C + l^{-1} I) for z ~ N(mu, C):
        // -0.5 [d log 2pi + log|M| + tr(M^{-1} (C + mu mu^T))], M = C + l^{-1} I
        let mut rng = StdRng::seed_from_u64(2);
        let cov = random_spd(3, &mut rng);
        let lambda = 4.0;
        let mu = e1(3) * 1.3;
        let m = SpdMatrix::new(cov.entries() + nalgebra::DMatrix::identity(3, 3) / lambda).unwrap();
        let closed = -0.5
            * (3.0 * crate::gaussian::LN_2PI
                + m.log_det()
                + (m.inverse() * (cov.entries() + &mu * mu.transpose())).trace());
        let est = phi_estimate(
            &Prior::gaussian_ridge(3, lambda).unwrap(),
            &mu,
            &cov,
            20_000,
            &mut rng,
        )
        .unwrap();
        assert!(
            (est.mean - closed).abs() < 3.0 * est.std_error,
            "mc {} vs closed {closed} (se {})",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn phi_stein_monotone_in_scale() {
        // Theorem-1(ii) direction at mu = 0: phi(0, 2I) < phi(0, I)
        let prior = Prior::stein(3).unwrap();
        let mu = DVector::zeros(3);
        let mut rng1 = StdRng::seed_from_u64(3);
        let mut rng2 = StdRng::seed_from_u64(3); // shared seed
        let big = phi_estimate(&prior, &mu, &SpdMatrix::scaled_identity(3, 2.0).unwrap(), 4000, &mut rng1)
            .unwrap();
        let small = phi_estimate(&prior, &mu, &SpdMatrix::identity(3), 4000, &mut rng2).unwrap();
        let combined_se = (big.std_error.powi(2) + small.std_error.powi(2)).sqrt();
        assert!(
            big.mean < small.mean - 3.0 * combined_se,
            "phi(2I) = {} phi(I) = {}",
            big.mean,
            small.mean
        );
    }

    #[test]
    fn risk_difference_uniform_bit_exact_zero() {
        let mut rng = StdRng::seed_from_u64(4);
        let sigma = random_spd(3, &mut rng);
        let tilde = random_spd(3, &mut rng).to_psd();
        let est = risk_difference(
            &Prior::uniform(3),
            &e1(3),
            &sigma,
            &tilde,
            50,
            &mut rng,
        )
        .unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn risk_difference_stein_improves_at_origin() {
        let mut rng = StdRng::seed_from_u64(5);
        let sigma = SpdMatrix::identity(5);
        let tilde = sigma.to_psd();
        let est = risk_difference(
            &Prior::stein(5).unwrap(),
            &DVector::zeros(5),
            &sigma,
            &tilde,
            4000,
            &mut rng,
        )
        .unwrap();
        assert!(
            est.mean < -3.0 * est.std_error,
            "mean {} se {}",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn risk_difference_matches_nested_direct_oracle() {
        let mut rng = StdRng::seed_from_u64(6);
        let d = 3;
        let sigma = random_spd(d, &mut rng);
        let tilde = random_spd(d, &mut rng).to_psd();
        let mu = e1(d) * 0.7;
        let prior = Prior::stein(d).unwrap();
        let phi_path = risk_difference(&prior, &mu, &sigma, &tilde, 3000, &mut rng).unwrap();
        let stein = direct_risk(
            &PredictiveSpec::Bayes(prior),
            &mu,
            &sigma,
            &tilde,
            400,
            200,
            &mut rng,
        )
        .unwrap();
        let uniform = direct_risk(
            &PredictiveSpec::Bayes(Prior::uniform(d)),
            &mu,
            &sigma,
            &tilde,
            4000,
            1,
            &mut rng,
        )
        .unwrap();
        let nested = stein.mean - uniform.mean;
        let se = (phi_path.std_error.powi(2) + stein.std_error.powi(2) + uniform.std_error.powi(2))
            .sqrt();
        assert!(
            (phi_path.mean - nested).abs() < 3.0 * se,
            "phi path {} nested {} se {}",
            phi_path.mean,
            nested,
            se
        );
    }

    #[test]
    fn direct_risk_plugin_isotropic_mean() {
        // Sigma = Sigma~ = v I: risk = d / 2 exactly in expectation
        let mut rng = StdRng::seed_from_u64(7);
        let v = 2.5;
        let sigma = SpdMatrix::scaled_identity(4, v).unwrap();
        let est = direct_risk(
            &PredictiveSpec::PlugIn,
            &e1(4),
            &sigma,
            &sigma.to_psd(),
            20_000,
            1,
            &mut rng,
        )
        .unwrap();
        assert!(
            (est.mean - 2.0).abs() < 3.0 * est.std_error,
            "mean {} se {}",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn direct_risk_uniform_translation_invariant() {
        let mut rng1 = StdRng::seed_from_u64(8);
        let mut rng2 = StdRng::seed_from_u64(9);
        let sigma = SpdMatrix::identity(3);
        let spec = PredictiveSpec::Bayes(Prior::uniform(3));
        let a = direct_risk(&spec, &DVector::zeros(3), &sigma, &sigma.to_psd(), 20_000, 1, &mut rng1)
            .unwrap();
        let b = direct_risk(&spec, &(e1(3) * 5.0), &sigma, &sigma.to_psd(), 20_000, 1, &mut rng2)
            .unwrap();
        let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        assert!((a.mean - b.mean).abs() < 3.0 * se);
    }

    #[test]
    fn direct_risk_stein_beats_uniform_at_origin() {
        let mut rng = StdRng::seed_from_u64(10);
        let sigma = SpdMatrix::identity(5);
        let tilde = sigma.to_psd();
        let mu = DVector::zeros(5);
        let stein = direct_risk(
            &PredictiveSpec::Bayes(Prior::stein(5).unwrap()),
            &mu,
            &sigma,
            &tilde,
            300,
            200,
            &mut rng,
        )
        .unwrap();
        let uniform = direct_risk(
            &PredictiveSpec::Bayes(Prior::uniform(5)),
            &mu,
            &sigma,
            &tilde,
            3000,
            1,
            &mut rng,
        )
        .unwrap();
        let se = (stein.std_error.powi(2) + uniform.std_error.powi(2)).sqrt();
        assert!(
            stein.mean < uniform.mean - 2.0 * se,
            "stein {} uniform {}",
            stein.mean,
            uniform.mean
        );
    }

    #[test]
    fn uniform_risk_exact_matches_nested_mc() {
        let mut rng = StdRng::seed_from_u64(11);
        let sigma = random_spd(3, &mut rng);
        let tilde = random_spd(3, &mut rng);
        let exact = uniform_risk_exact(&sigma, &tilde).unwrap();
        let est = direct_risk(
            &PredictiveSpec::Bayes(Prior::uniform(3)),
            &e1(3),
            &sigma,
            &tilde.to_psd(),
            20_000,
            1,
            &mut rng,
        )
        .unwrap();
        assert!(
            (est.mean - exact).abs() < 3.0 * est.std_error,
            "mc {} exact {exact}",
            est.mean
        );
    }

    #[test]
    fn ridge_risk_exact_matches_nested_mc() {
        let mut rng = StdRng::seed_from_u64(12);
        let sigma = random_spd(3, &mut rng);
        let tilde = random_spd(3, &mut rng);
        let mu = e1(3) * 1.5;
        let lambda = 3.0;
        let exact = ridge_risk_exact(&mu, &sigma, &tilde, lambda).unwrap();
        let est = direct_risk(
            &PredictiveSpec::Bayes(Prior::gaussian_ridge(3, lambda).unwrap()),
            &mu,
            &sigma,
            &tilde.to_psd(),
            20_000,
            1,
            &mut rng,
        )
        .unwrap();
        assert!(
            (est.mean - exact).abs() < 3.0 * est.std_error,
            "mc {} exact {exact} se {}",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn ridge_plugin_risk_exact_matches_mc() {
        // direct MC over y of the plug-in-at-ridge-estimate divergence
        let mut rng = StdRng::seed_from_u64(21);
        let sigma = random_spd(3, &mut rng);
        let tilde = random_spd(3, &mut rng);
        let mu = e1(3) * 2.0;
        let lambda = 5.0;
        let exact = ridge_plugin_risk_exact(&mu, &sigma, &tilde, lambda).unwrap();
        let precision =
            SpdMatrix::new(sigma.inverse() + nalgebra::DMatrix::identity(3, 3) * lambda).unwrap();
        let gain = precision.inverse() * sigma.inverse();
        let n = 40_000;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let y = &mu + sigma.sqrt() * standard_normal_vector(3, &mut rng);
            let est = &gain * y;
            let diff = &est - &mu;
            values.push(0.5 * tilde.inv_quad_form(&diff));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - exact).abs() < 3.0 * se,
            "mc {mean} exact {exact} se {se}"
        );
    }

    #[test]
    fn plugin_risk_exact_matches_mc() {
        let mut rng = StdRng::seed_from_u64(13);
        let sigma = random_spd(3, &mut rng);
        let tilde = random_spd(3, &mut rng).to_psd();
        let exact = plugin_risk_exact(&sigma, &tilde);
        let est = direct_risk(
            &PredictiveSpec::PlugIn,
            &e1(3),
            &sigma,
            &tilde,
            20_000,
            1,
            &mut rng,
        )
        .unwrap();
        assert!((est.mean - exact).abs() < 3.0 * est.std_error);
    }

    #[test]
    fn wishart_mean_is_identity() {
        let mut rng = StdRng::seed_from_u64(14);
        let d = 4;
        let df = default_wishart_df(d);
        let n = 2000;
        let mut acc = nalgebra::DMatrix::zeros(d, d);
        for _ in 0..n {
            acc += wishart_identity(d, df, &mut rng).unwrap().entries();
        }
        acc /= n as f64;
        for i in 0..d {
            for j in 0..d {
                let expect = if i == j { 1.0 } else { 0.0 };
                // var of entries is O(1/df); loose 5-sigma band
                assert!(
                    (acc[(i, j)] - expect).abs() < 5.0 * (2.0 / (df * n as f64)).sqrt() + 0.02,
                    "({i},{j}) = {}",
                    acc[(i, j)]
                );
            }
        }
    }

    #[test]
    fn design_induced_rank_matches_columns() {
        let mut rng = StdRng::seed_from_u64(15);
        let ens = CovarianceEnsemble::DesignInduced {
            design: DesignDistribution::StdNormalEntries,
            noise_var: 1.0,
            cols: 2,
        };
        let s = ens.sample_psd(5, &mut rng).unwrap();
        assert_eq!(s.rank(), 2);
        assert!(ens.sample_spd(5, &mut rng).is_err());

        let full = CovarianceEnsemble::DesignInduced {
            design: DesignDistribution::UniformPm1,
            noise_var: 2.0,
            cols: 10,
        };
        assert!(full.sample_spd(5, &mut rng).is_ok());
    }

    #[test]
    fn bayes_risk_difference_uniform_zero_and_stein_negative() {
        let mut rng = StdRng::seed_from_u64(16);
        let d = 5;
        let mu = DVector::zeros(d);
        let ens = CovarianceEnsemble::WishartIdentity {
            df: default_wishart_df(d),
        };
        let uniform = bayes_risk_difference(
            &PriorSpec::Fixed(Prior::uniform(d)),
            &mu,
            &ens,
            &ens,
            100,
            &mut rng,
        )
        .unwrap();
        assert_eq!(uniform.mean, 0.0);

        let stein = bayes_risk_difference(
            &PriorSpec::TrainCovRescaledStein,
            &mu,
            &ens,
            &ens,
            2000,
            &mut rng,
        )
        .unwrap();
        assert!(
            stein.mean < -3.0 * stein.std_error,
            "mean {} se {}",
            stein.mean,
            stein.std_error
        );
    }

    #[test]
    fn bayes_risk_difference_decays_with_mean_norm() {
        let mut rng1 = StdRng::seed_from_u64(17);
        let mut rng2 = StdRng::seed_from_u64(17);
        let d = 5;
        let ens = CovarianceEnsemble::WishartIdentity {
            df: default_wishart_df(d),
        };
        let spec = PriorSpec::TrainCovRescaledStein;
        let at_zero =
            bayes_risk_difference(&spec, &DVector::zeros(d), &ens, &ens, 2000, &mut rng1).unwrap();
        let away =
            bayes_risk_difference(&spec, &(e1(d) * 2.0), &ens, &ens, 2000, &mut rng2).unwrap();
        let se = (at_zero.std_error.powi(2) + away.std_error.powi(2)).sqrt();
        // shrinkage gain decays with ||mu||: difference less negative away
        assert!(
            away.mean >= at_zero.mean - 3.0 * se,
            "at zero {} away {}",
            at_zero.mean,
            away.mean
        );
    }

    #[test]
    fn risk_difference_semidefinite_continuity() {
        // A rank-deficient Sigma~ is the limit of ridge-regularizing the
        // future *precision* (the gram ridge of the regression reduction):
        // Sigma~_eps = (Sigma~^dagger + eps I)^{-1} -> pseudo-inverse path.
        // Regularizing the covariance Sigma~ + eps I instead diverges: its
        // inverse blows up on the null space, injecting spurious future
        // information.
        let d = 3;
        let sigma = SpdMatrix::identity(d);
        let mu = e1(d) * 0.5;
        let prior = Prior::stein(d).unwrap();
        let rank1 = PsdMatrix::new(nalgebra::DMatrix::from_diagonal(
            &DVector::from_row_slice(&[1.0, 0.0, 0.0]),
        ))
        .unwrap();
        let mut rng_a = StdRng::seed_from_u64(99);
        let exact = risk_difference(&prior, &mu, &sigma, &rank1, 3000, &mut rng_a).unwrap();
        assert!(exact.mean.is_finite());
        for eps in [1e-4, 1e-6] {
            let precision =
                rank1.pseudo_inverse() + nalgebra::DMatrix::identity(d, d) * eps;
            let reg = SpdMatrix::new(SpdMatrix::new(precision).unwrap().inverse().clone())
                .unwrap()
                .to_psd();
            let mut rng_b = StdRng::seed_from_u64(99);
            let est = risk_difference(&prior, &mu, &sigma, &reg, 3000, &mut rng_b).unwrap();
            let se = (exact.std_error.powi(2) + est.std_error.powi(2)).sqrt();
            assert!(
                (est.mean - exact.mean).abs() <= (3.0 * se).max(1e-3),
                "eps {eps}: {} vs {}",
                est.mean,
                exact.mean
            );
        }
    }

    #[test]
    fn risk_difference_monotone_in_future_information() {
        // more future information (smaller Sigma~) => more negative difference
        let d = 3;
        let sigma = SpdMatrix::identity(d);
        let prior = Prior::stein(d).unwrap();
        let mu = DVector::zeros(d);
        let mut rng_a = StdRng::seed_from_u64(20);
        let mut rng_b = StdRng::seed_from_u64(20);
        let loose = risk_difference(&prior, &mu, &sigma, &sigma.to_psd(), 3000, &mut rng_a).unwrap();
        let tight = risk_difference(
            &prior,
            &mu,
            &sigma,
            &SpdMatrix::scaled_identity(d, 0.5).unwrap().to_psd(),
            3000,
            &mut rng_b,
        )
        .unwrap();
        assert!(
            tight.mean < loose.mean,
            "tight {} loose {}",
            tight.mean,
            loose.mean
        );
    }
}
