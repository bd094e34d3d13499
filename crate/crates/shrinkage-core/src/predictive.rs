//! Bayesian predictive densities through the ratio formula
//! `p_pi(y~ | y) = p_I(y~ | y) m_pi(w; Sigma_w) / m_pi(y; Sigma)`,
//! an exact rejection sampler, and the plug-in density.
//!
//! The prior's additive constant appears in both marginals and cancels; the
//! predictive log-density is constant-free.

use std::sync::OnceLock;

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::{combine_cov, mvn_logpdf, mvn_sample, psd_mvn_support_logpdf};
use crate::marginal::{posterior_mean_with, MarginalEvaluator};
use crate::matrix::{PsdMatrix, SpdMatrix};
use crate::prior::Prior;

/// Consecutive rejections after which the sampler reports a pathological
/// acceptance rate (below `1e-4`).
const MAX_CONSECUTIVE_REJECTIONS: usize = 10_000;

/// Predictive density `p_pi(y~ | y)` for fixed `(y, Sigma, Sigma~, prior)`.
///
/// The marginal evaluators for `Sigma` and `Sigma_w` and the cached
/// `log m_pi(y; Sigma)` are built once; per-`y~` evaluation only forms the
/// combined statistic `w` and runs one marginal evaluation at `Sigma_w`.
pub struct PredictiveDensity {
    y: DVector<f64>,
    sigma: SpdMatrix,
    sigma_tilde: PsdMatrix,
    prior: Prior,
    sigma_w: SpdMatrix,
    /// `Sigma + Sigma~`, the covariance of `p_I`.
    total_cov: SpdMatrix,
    /// `Sigma^{-1} y`, reused in the per-`y~` statistic.
    sigma_inv_y: DVector<f64>,
    ev_sigma: MarginalEvaluator,
    ev_sigma_w: MarginalEvaluator,
    log_m_y: f64,
    /// `log m(0; Sigma_w)`, the rejection bound; lazy because only sampling
    /// needs it.
    log_m_peak: OnceLock<f64>,
}

impl PredictiveDensity {
    pub fn new(
        y: DVector<f64>,
        sigma: SpdMatrix,
        sigma_tilde: PsdMatrix,
        prior: Prior,
    ) -> Result<Self> {
        Self::with_rel_tol(y, sigma, sigma_tilde, prior, crate::marginal::DEFAULT_QUAD_REL_TOL)
    }

    /// Builder with a custom quadrature tolerance for the Stein marginals;
    /// Monte Carlo callers trade precision for speed here.
    pub fn with_rel_tol(
        y: DVector<f64>,
        sigma: SpdMatrix,
        sigma_tilde: PsdMatrix,
        prior: Prior,
        rel_tol: f64,
    ) -> Result<Self> {
        let d = sigma.dim();
        if y.len() != d || sigma_tilde.dim() != d || prior.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: y.len(),
            });
        }
        let sigma_w = combine_cov(&sigma, &sigma_tilde)?;
        let total_cov = SpdMatrix::new(sigma.entries() + sigma_tilde.entries())?;
        let ev_sigma = MarginalEvaluator::with_rel_tol(prior.clone(), sigma.clone(), rel_tol)?;
        let ev_sigma_w = MarginalEvaluator::with_rel_tol(prior.clone(), sigma_w.clone(), rel_tol)?;
        let log_m_y = ev_sigma.log_marginal(&y)?;
        let sigma_inv_y = sigma.inverse() * &y;
        Ok(Self {
            y,
            sigma,
            sigma_tilde,
            prior,
            sigma_w,
            total_cov,
            sigma_inv_y,
            ev_sigma,
            ev_sigma_w,
            log_m_y,
            log_m_peak: OnceLock::new(),
        })
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn sigma_w(&self) -> &SpdMatrix {
        &self.sigma_w
    }

    /// Combined statistic `w = Sigma_w (Sigma^{-1} y + Sigma~^dagger y~)`.
    pub fn combined_statistic(&self, y_tilde: &DVector<f64>) -> DVector<f64> {
        let rhs = &self.sigma_inv_y + self.sigma_tilde.pseudo_inverse() * y_tilde;
        self.sigma_w.entries() * rhs
    }

    /// `log p_pi(y~ | y)`.
    pub fn logpdf(&self, y_tilde: &DVector<f64>) -> Result<f64> {
        let log_p_i = mvn_logpdf(y_tilde, &self.y, &self.total_cov);
        let w = self.combined_statistic(y_tilde);
        let log_m_w = self.ev_sigma_w.log_marginal(&w)?;
        Ok(log_p_i + log_m_w - self.log_m_y)
    }

    /// Mean of the predictive density, equal to the posterior mean
    /// `E[mu | y]`; computed through the marginal gradient, never by
    /// sampling.
    pub fn mean(&self) -> Result<DVector<f64>> {
        posterior_mean_with(&self.ev_sigma, &self.y)
    }

    fn rejection_bound(&self) -> Result<f64> {
        if let Some(&v) = self.log_m_peak.get() {
            return Ok(v);
        }
        if !self.prior.is_radially_nonincreasing() {
            return Err(Error::RadialNotNonincreasing);
        }
        let zero = DVector::zeros(self.sigma.dim());
        let peak = self.ev_sigma_w.log_marginal(&zero)?;
        Ok(*self.log_m_peak.get_or_init(|| peak))
    }

    /// Exact draw from `p_pi` by rejection: propose `y~ ~ p_I = N(y,
    /// Sigma + Sigma~)` and accept with probability
    /// `m(w; Sigma_w) / m(0; Sigma_w)`; the bound is the marginal's peak for
    /// radially nonincreasing priors.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let bound = self.rejection_bound()?;
        let mut rejections = 0usize;
        loop {
            let proposal = mvn_sample(&self.y, &self.total_cov, rng);
            let w = self.combined_statistic(&proposal);
            let log_m_w = self.ev_sigma_w.log_marginal(&w)?;
            let log_accept = (log_m_w - bound).min(0.0);
            if rng.random::<f64>().ln() < log_accept {
                return Ok(proposal);
            }
            rejections += 1;
            if rejections >= MAX_CONSECUTIVE_REJECTIONS {
                return Err(Error::AcceptanceRateTooLow {
                    min_rate: 1e-4,
                    rejections,
                });
            }
        }
    }

    /// Draws `n` samples and reports the overall acceptance rate.
    pub fn sample_n<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<(Vec<DVector<f64>>, f64)> {
        let bound = self.rejection_bound()?;
        let mut out = Vec::with_capacity(n);
        let mut proposals = 0usize;
        while out.len() < n {
            let proposal = mvn_sample(&self.y, &self.total_cov, rng);
            proposals += 1;
            let w = self.combined_statistic(&proposal);
            let log_m_w = self.ev_sigma_w.log_marginal(&w)?;
            let log_accept = (log_m_w - bound).min(0.0);
            if rng.random::<f64>().ln() < log_accept {
                out.push(proposal);
            } else if proposals > MAX_CONSECUTIVE_REJECTIONS * (1 + out.len()) {
                return Err(Error::AcceptanceRateTooLow {
                    min_rate: 1e-4,
                    rejections: proposals - out.len(),
                });
            }
        }
        Ok((out, n as f64 / proposals as f64))
    }
}

/// Log plug-in density `log N(y~; mu_hat, Sigma~)` with the MLE mean
/// `mu_hat`; rank-deficient `Sigma~` is evaluated on its support.
pub fn plugin_logpdf(
    y_tilde: &DVector<f64>,
    mu_hat: &DVector<f64>,
    sigma_tilde: &PsdMatrix,
) -> f64 {
    psd_mvn_support_logpdf(y_tilde, mu_hat, sigma_tilde)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{standard_normal_vector, uniform_predictive_logpdf, LN_2PI};
    use crate::matrix::testutil::random_spd;
    use crate::prior::log_prior;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn uniform_prior_reduces_to_uniform_predictive() {
        let mut rng = StdRng::seed_from_u64(1);
        let sigma = random_spd(3, &mut rng);
        let tilde = random_spd(3, &mut rng).to_psd();
        let y = standard_normal_vector(3, &mut rng);
        let pd = PredictiveDensity::new(y.clone(), sigma.clone(), tilde.clone(), Prior::uniform(3))
            .unwrap();
        for _ in 0..10 {
            let yt = standard_normal_vector(3, &mut rng) * 2.0;
            let lhs = pd.logpdf(&yt).unwrap();
            let rhs = uniform_predictive_logpdf(&yt, &y, &sigma, &tilde).unwrap();
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn ridge_prior_matches_conjugate_closed_form() {
        let mut rng = StdRng::seed_from_u64(2);
        let d = 4;
        let lambda = 2.5;
        let sigma = random_spd(d, &mut rng);
        let tilde = random_spd(d, &mut rng).to_psd();
        let y = standard_normal_vector(d, &mut rng) * 1.5;
        let pd = PredictiveDensity::new(
            y.clone(),
            sigma.clone(),
            tilde.clone(),
            Prior::gaussian_ridge(d, lambda).unwrap(),
        )
        .unwrap();
        // conjugate predictive: N(y~; V_n Sigma^{-1} y, Sigma~ + V_n) with
        // V_n = (Sigma^{-1} + lambda I)^{-1}
        let v_n = SpdMatrix::new(
            SpdMatrix::new(sigma.inverse() + DMatrix::identity(d, d) * lambda)
                .unwrap()
                .inverse()
                .clone(),
        )
        .unwrap();
        let m_n = v_n.entries() * sigma.inverse() * &y;
        let pred_cov = SpdMatrix::new(tilde.entries() + v_n.entries()).unwrap();
        for _ in 0..10 {
            let yt = standard_normal_vector(d, &mut rng) * 2.0;
            let lhs = pd.logpdf(&yt).unwrap();
            let rhs = mvn_logpdf(&yt, &m_n, &pred_cov);
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-8);
        }
    }

    #[test]
    fn stein_predictive_is_proper() {
        // importance-sampling normalization check: E_{p_I}[p_pi / p_I] = 1
        let mut rng = StdRng::seed_from_u64(3);
        let sigma = SpdMatrix::identity(3);
        let tilde = sigma.to_psd();
        let y = DVector::from_row_slice(&[0.8, -0.3, 0.5]);
        let pd = PredictiveDensity::with_rel_tol(
            y.clone(),
            sigma.clone(),
            tilde.clone(),
            Prior::stein(3).unwrap(),
            1e-6,
        )
        .unwrap();
        let total = SpdMatrix::new(sigma.entries() + tilde.entries()).unwrap();
        let n = 200_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let yt = mvn_sample(&y, &total, &mut rng);
            let ratio = (pd.logpdf(&yt).unwrap() - mvn_logpdf(&yt, &y, &total)).exp();
            sum += ratio;
            sumsq += ratio * ratio;
        }
        let mean = sum / n as f64;
        let se = ((sumsq / n as f64 - mean * mean).max(0.0) / n as f64).sqrt();
        assert!(
            (mean - 1.0).abs() < (3.0 * se).max(0.01),
            "integral {mean} +- {se}"
        );
    }

    #[test]
    fn lemma2_ratio_agrees_with_direct_definition() {
        // direct MC of the defining ratio of integrals over mu, importance
        // sampled from N(y, Sigma)
        let mut rng = StdRng::seed_from_u64(4);
        let d = 3;
        let sigma = random_spd(d, &mut rng);
        let tilde = random_spd(d, &mut rng).to_psd();
        let y = standard_normal_vector(d, &mut rng);
        let prior = Prior::stein(d).unwrap();
        let pd =
            PredictiveDensity::new(y.clone(), sigma.clone(), tilde.clone(), prior.clone()).unwrap();
        let tilde_spd = tilde.to_spd().unwrap();
        for _ in 0..3 {
            let yt = standard_normal_vector(d, &mut rng);
            let ratio_path = pd.logpdf(&yt).unwrap();
            let n = 400_000;
            let (mut num, mut den) = (0.0f64, 0.0f64);
            let mut num_sq = 0.0f64;
            for _ in 0..n {
                let mu = mvn_sample(&y, &sigma, &mut rng);
                let pi = log_prior(&prior, &mu).unwrap().exp();
                let lik = mvn_logpdf(&yt, &mu, &tilde_spd).exp();
                num += pi * lik;
                num_sq += (pi * lik) * (pi * lik);
                den += pi;
            }
            let direct = (num / den).ln();
            let rel_se = {
                let mean = num / n as f64;
                let var = (num_sq / n as f64 - mean * mean).max(0.0);
                (var / n as f64).sqrt() / mean
            };
            assert!(
                (ratio_path - direct).abs() < (4.0 * rel_se).max(0.02),
                "ratio {ratio_path} direct {direct} rel_se {rel_se}"
            );
        }
    }

    #[test]
    fn uniform_sampler_accepts_everything() {
        let mut rng = StdRng::seed_from_u64(5);
        let sigma = SpdMatrix::identity(3);
        let pd = PredictiveDensity::new(
            DVector::zeros(3),
            sigma.clone(),
            sigma.to_psd(),
            Prior::uniform(3),
        )
        .unwrap();
        let (samples, rate) = pd.sample_n(1000, &mut rng).unwrap();
        assert_eq!(samples.len(), 1000);
        assert_eq!(rate, 1.0);
    }

    #[test]
    fn sample_mean_matches_posterior_mean() {
        let mut rng = StdRng::seed_from_u64(6);
        let sigma = SpdMatrix::identity(3);
        let tilde = SpdMatrix::scaled_identity(3, 2.0).unwrap().to_psd();
        let y = DVector::from_row_slice(&[2.0, 0.0, -1.0]);
        let pd = PredictiveDensity::with_rel_tol(
            y.clone(),
            sigma,
            tilde,
            Prior::stein(3).unwrap(),
            1e-6,
        )
        .unwrap();
        let n = 10_000;
        let (samples, rate) = pd.sample_n(n, &mut rng).unwrap();
        assert!(rate > 0.01, "acceptance rate {rate}");
        let mut mean = DVector::zeros(3);
        for s in &samples {
            mean += s;
        }
        mean /= n as f64;
        let expect = pd.mean().unwrap();
        // per-coordinate 3-SE check; predictive variance is bounded by
        // diag(Sigma + Sigma~) here
        for i in 0..3 {
            let se = (3.0f64 / n as f64).sqrt();
            assert!(
                (mean[i] - expect[i]).abs() < 3.5 * se,
                "coord {i}: {} vs {}",
                mean[i],
                expect[i]
            );
        }
    }

    #[test]
    fn uniform_predictive_translation_invariance() {
        let mut rng = StdRng::seed_from_u64(7);
        let sigma = random_spd(3, &mut rng);
        let tilde = random_spd(3, &mut rng).to_psd();
        let y = standard_normal_vector(3, &mut rng);
        let yt = standard_normal_vector(3, &mut rng);
        let delta = standard_normal_vector(3, &mut rng) * 3.0;
        let pd = PredictiveDensity::new(y.clone(), sigma.clone(), tilde.clone(), Prior::uniform(3))
            .unwrap();
        let pd_shift = PredictiveDensity::new(&y + &delta, sigma, tilde, Prior::uniform(3)).unwrap();
        assert_abs_diff_eq!(
            pd.logpdf(&yt).unwrap(),
            pd_shift.logpdf(&(&yt + &delta)).unwrap(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn radial_prior_joint_shift_equivariance() {
        // shifting y, y~, and the prior center together leaves the log
        // density invariant (frozen-draw marginals make this bit-for-bit)
        use std::sync::Arc;
        let mut rng = StdRng::seed_from_u64(8);
        let sigma = random_spd(3, &mut rng);
        let tilde = random_spd(3, &mut rng).to_psd();
        let y = standard_normal_vector(3, &mut rng);
        let yt = standard_normal_vector(3, &mut rng);
        let delta = DVector::from_row_slice(&[5.0, -2.0, 1.0]);
        let g: crate::prior::RadialFn = Arc::new(|r: f64| (-0.5 * r * r).exp());
        let centered = Prior::radial_centered(3, g.clone(), DVector::zeros(3), true);
        let shifted = Prior::radial_centered(3, g, delta.clone(), true);
        let pd = PredictiveDensity::new(y.clone(), sigma.clone(), tilde.clone(), centered).unwrap();
        let pd_shift = PredictiveDensity::new(&y + &delta, sigma, tilde, shifted).unwrap();
        let lhs = pd.logpdf(&yt).unwrap();
        let rhs = pd_shift.logpdf(&(&yt + &delta)).unwrap();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-9);
    }

    #[test]
    fn plugin_at_mode_and_kl_mean_term() {
        let mu_hat = DVector::from_row_slice(&[0.4, 0.1, -0.2]);
        let tilde = SpdMatrix::identity(3).to_psd();
        let lp = plugin_logpdf(&mu_hat, &mu_hat, &tilde);
        assert_abs_diff_eq!(lp, -1.5 * LN_2PI, epsilon = 1e-12);

        // KL(N(mu, I) || N(mu + delta, I)) = ||delta||^2 / 2
        let delta = DVector::from_row_slice(&[0.3, -0.4, 0.5]);
        let kl = crate::gaussian::gaussian_kl(
            &mu_hat,
            &tilde,
            &(&mu_hat + &delta),
            &SpdMatrix::identity(3),
        )
        .unwrap();
        assert_abs_diff_eq!(kl, 0.5 * delta.norm_squared(), epsilon = 1e-12);
    }

    #[test]
    fn rank_deficient_future_covariance_is_supported() {
        let mut rng = StdRng::seed_from_u64(9);
        let sigma = random_spd(3, &mut rng);
        let tilde = PsdMatrix::new(DMatrix::from_diagonal(&DVector::from_row_slice(&[
            2.0, 0.0, 0.0,
        ])))
        .unwrap();
        let y = standard_normal_vector(3, &mut rng);
        let pd =
            PredictiveDensity::new(y.clone(), sigma, tilde, Prior::stein(3).unwrap()).unwrap();
        let yt = standard_normal_vector(3, &mut rng);
        assert!(pd.logpdf(&yt).unwrap().is_finite());
        let s = pd.sample(&mut rng).unwrap();
        assert_eq!(s.len(), 3);
    }
}
