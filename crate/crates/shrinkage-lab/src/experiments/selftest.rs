//! `selftest`: the cross-module oracle suite. Every derived quantity with an
//! independent oracle is checked here; the run prints one line per check and
//! the process exits nonzero if any of them fails.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use shrinkage_core::gaussian::{
    combine, gaussian_kl, mvn_logpdf, mvn_sample, semidefinite_normal_sample,
    standard_normal_vector, uniform_predictive_logpdf,
};
use shrinkage_core::marginal::{
    log_marginal_mc_oracle, posterior_mean, MarginalEvaluator,
};
use shrinkage_core::regression::{
    astar_regression_prior, reduce, reduce_future, ridge_estimator, FutureDesign, RegressionData,
};
use shrinkage_core::risk::{direct_risk, phi_estimate, risk_difference, PredictiveSpec};
use shrinkage_core::seedstream::ChaCha12Rng;
use shrinkage_core::{
    build_astar, log_prior, rescaled_stein_identity_check, seed_substream, superharmonicity_check,
    DesignDistribution, PredictiveDensity, Prior, PsdMatrix, SpdMatrix,
};

use crate::experiments::{seed_ns, RunContext};

type CheckResult = Result<String, String>;

fn rng_for(master: u64, idx: u64) -> ChaCha12Rng {
    seed_substream(master, &[seed_ns::SELFTEST, idx])
}

fn random_spd<R: Rng + ?Sized>(d: usize, rng: &mut R) -> SpdMatrix {
    let b = DesignDistribution::StdNormalEntries.sample_matrix(d, d, rng);
    SpdMatrix::new(&b * b.transpose() + DMatrix::identity(d, d) * 0.5).expect("SPD by construction")
}

fn e1(d: usize) -> DVector<f64> {
    let mut v = DVector::zeros(d);
    v[0] = 1.0;
    v
}

fn check_marginal_quadrature_vs_mc(master: u64) -> CheckResult {
    let mut rng = rng_for(master, 1);
    // analytic point: m_S(0; I_3) = sqrt(2/pi)
    let ev = MarginalEvaluator::auto(Prior::stein(3).map_err(|e| e.to_string())?, SpdMatrix::identity(3))
        .map_err(|e| e.to_string())?;
    let at_origin = ev
        .log_marginal(&DVector::zeros(3))
        .map_err(|e| e.to_string())?
        .exp();
    let analytic = (2.0 / std::f64::consts::PI).sqrt();
    if (at_origin - analytic).abs() > 1e-3 {
        return Err(format!("m(0; I_3) = {at_origin}, analytic {analytic}"));
    }
    let mut worst = 0.0f64;
    for trial in 0..6 {
        let d = [3, 5, 7][trial % 3];
        let cov = random_spd(d, &mut rng);
        let prior = if trial % 2 == 0 {
            Prior::stein(d).map_err(|e| e.to_string())?
        } else {
            Prior::rescaled_stein(random_spd(d, &mut rng)).map_err(|e| e.to_string())?
        };
        let z = standard_normal_vector(d, &mut rng) * 1.5;
        let ev = MarginalEvaluator::auto(prior.clone(), cov.clone()).map_err(|e| e.to_string())?;
        let quad = ev.log_marginal(&z).map_err(|e| e.to_string())?.exp();
        let mc = log_marginal_mc_oracle(&prior, &cov, &z, 200_000, &mut rng)
            .map_err(|e| e.to_string())?;
        let gap = (quad - mc.mean).abs();
        if gap > 4.0 * mc.std_error {
            return Err(format!(
                "trial {trial}: quadrature {quad} vs MC {} +- {}",
                mc.mean, mc.std_error
            ));
        }
        worst = worst.max(gap / mc.std_error.max(1e-300));
    }
    Ok(format!(
        "analytic origin matched to {:.1e}; worst MC gap {:.2} SE",
        (at_origin - analytic).abs(),
        worst
    ))
}

fn check_marginal_far_field(_master: u64) -> CheckResult {
    let ev = MarginalEvaluator::auto(Prior::stein(5).map_err(|e| e.to_string())?, SpdMatrix::identity(5))
        .map_err(|e| e.to_string())?;
    let lm = ev.log_marginal(&(e1(5) * 50.0)).map_err(|e| e.to_string())?;
    let asymptote = -3.0 * 50.0f64.ln();
    if (lm - asymptote).abs() > 1e-3 {
        return Err(format!("log m = {lm}, far-field asymptote {asymptote}"));
    }
    Ok(format!("|log m - (2-d) log r| = {:.1e} at r = 50", (lm - asymptote).abs()))
}

fn check_lemma2_ratio_vs_direct(master: u64) -> CheckResult {
    let mut rng = rng_for(master, 2);
    let d = 3;
    let sigma = random_spd(d, &mut rng);
    let tilde = random_spd(d, &mut rng);
    let y = standard_normal_vector(d, &mut rng);
    let prior = Prior::stein(d).map_err(|e| e.to_string())?;
    let pd = PredictiveDensity::new(y.clone(), sigma.clone(), tilde.to_psd(), prior.clone())
        .map_err(|e| e.to_string())?;
    for _ in 0..2 {
        let yt = standard_normal_vector(d, &mut rng);
        let ratio_path = pd.logpdf(&yt).map_err(|e| e.to_string())?;
        let n = 300_000;
        let (mut num, mut den, mut num_sq) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..n {
            let mu = mvn_sample(&y, &sigma, &mut rng);
            let pi = log_prior(&prior, &mu).map_err(|e| e.to_string())?.exp();
            let lik = mvn_logpdf(&yt, &mu, &tilde).exp();
            num += pi * lik;
            num_sq += pi * lik * pi * lik;
            den += pi;
        }
        let direct = (num / den).ln();
        let mean = num / n as f64;
        let rel_se = ((num_sq / n as f64 - mean * mean).max(0.0) / n as f64).sqrt() / mean;
        if (ratio_path - direct).abs() > (4.0 * rel_se).max(0.02) {
            return Err(format!(
                "ratio path {ratio_path} vs direct {direct} (rel SE {rel_se:.1e})"
            ));
        }
    }
    Ok("ratio formula matches the defining integral".to_string())
}

fn check_lemma4_fd_identity(master: u64) -> CheckResult {
    // sum_i dN/da_i = (1/2) Laplacian_x N for N(x; mu, diag(a))
    let mut rng = rng_for(master, 3);
    let d = 4;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let a = DVector::from_fn(d, |_, _| 0.5 + rng.random::<f64>());
        let mu = standard_normal_vector(d, &mut rng);
        let x = &mu + standard_normal_vector(d, &mut rng) * 0.7;
        let density = |xv: &DVector<f64>, av: &DVector<f64>| -> f64 {
            let cov = SpdMatrix::new(DMatrix::from_diagonal(av)).expect("diagonal SPD");
            mvn_logpdf(xv, &mu, &cov).exp()
        };
        // lhs: central differences in each diagonal entry
        let mut lhs = 0.0;
        for i in 0..d {
            let h = 1e-5 * a[i];
            let mut plus = a.clone();
            plus[i] += h;
            let mut minus = a.clone();
            minus[i] -= h;
            lhs += (density(&x, &plus) - density(&x, &minus)) / (2.0 * h);
        }
        // rhs: (1/2) discrete Laplacian in x
        let mut lap = 0.0;
        let center = density(&x, &a);
        for i in 0..d {
            let h = 1e-4;
            let mut plus = x.clone();
            plus[i] += h;
            let mut minus = x.clone();
            minus[i] -= h;
            lap += (density(&plus, &a) + density(&minus, &a) - 2.0 * center) / (h * h);
        }
        let rhs = 0.5 * lap;
        let rel = (lhs - rhs).abs() / rhs.abs().max(1e-12);
        worst = worst.max(rel);
        if rel > 1e-4 {
            return Err(format!("relative error {rel:.2e} (lhs {lhs}, rhs {rhs})"));
        }
    }
    Ok(format!("worst relative error {worst:.2e} over 10 draws"))
}

fn check_conjugate_closed_forms(master: u64) -> CheckResult {
    let mut rng = rng_for(master, 4);
    let d = 4;
    let lambda = 2.5;
    let sigma = random_spd(d, &mut rng);
    let tilde = random_spd(d, &mut rng);
    let y = standard_normal_vector(d, &mut rng) * 1.5;
    let prior = Prior::gaussian_ridge(d, lambda).map_err(|e| e.to_string())?;

    // predictive: N(V_n Sigma^{-1} y, Sigma~ + V_n)
    let v_n = SpdMatrix::new(
        SpdMatrix::new(sigma.inverse() + DMatrix::identity(d, d) * lambda)
            .map_err(|e| e.to_string())?
            .inverse()
            .clone(),
    )
    .map_err(|e| e.to_string())?;
    let m_n = v_n.entries() * sigma.inverse() * &y;
    let pred_cov = SpdMatrix::new(tilde.entries() + v_n.entries()).map_err(|e| e.to_string())?;
    let pd = PredictiveDensity::new(y.clone(), sigma.clone(), tilde.to_psd(), prior.clone())
        .map_err(|e| e.to_string())?;
    for _ in 0..5 {
        let yt = standard_normal_vector(d, &mut rng) * 2.0;
        let lhs = pd.logpdf(&yt).map_err(|e| e.to_string())?;
        let rhs = mvn_logpdf(&yt, &m_n, &pred_cov);
        if (lhs - rhs).abs() > 1e-8 {
            return Err(format!("predictive: ratio {lhs} vs conjugate {rhs}"));
        }
    }
    // posterior mean: (Sigma^{-1} + lambda I)^{-1} Sigma^{-1} y
    let pm = posterior_mean(&prior, &y, &sigma).map_err(|e| e.to_string())?;
    let expect = v_n.entries() * sigma.inverse() * &y;
    if (&pm - &expect).amax() > 1e-8 {
        return Err("posterior mean disagrees with the conjugate formula".to_string());
    }
    // marginal: N(z; 0, C + lambda^{-1} I)
    let ev = MarginalEvaluator::auto(prior, sigma.clone()).map_err(|e| e.to_string())?;
    let z = standard_normal_vector(d, &mut rng);
    let total = SpdMatrix::new(sigma.entries() + DMatrix::identity(d, d) / lambda)
        .map_err(|e| e.to_string())?;
    let lhs = ev.log_marginal(&z).map_err(|e| e.to_string())?;
    let rhs = mvn_logpdf(&z, &DVector::zeros(d), &total);
    if (lhs - rhs).abs() > 1e-10 {
        return Err(format!("marginal: {lhs} vs Gaussian convolution {rhs}"));
    }
    Ok("ridge predictive, posterior mean, and marginal match conjugate algebra".to_string())
}

fn check_gaussian_kl_oracle(master: u64) -> CheckResult {
    let mut rng = rng_for(master, 5);
    let d = 3;
    let s1 = random_spd(d, &mut rng);
    let s2 = random_spd(d, &mut rng);
    let mu1 = standard_normal_vector(d, &mut rng);
    let mu2 = standard_normal_vector(d, &mut rng);
    let exact = gaussian_kl(&mu1, &s1.to_psd(), &mu2, &s2).map_err(|e| e.to_string())?;
    let n = 150_000;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let x = mvn_sample(&mu1, &s1, &mut rng);
        let v = mvn_logpdf(&x, &mu1, &s1) - mvn_logpdf(&x, &mu2, &s2);
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n as f64;
    let se = ((sum_sq / n as f64 - mean * mean).max(0.0) / n as f64).sqrt();
    if (mean - exact).abs() > 4.0 * se {
        return Err(format!("closed form {exact} vs MC {mean} +- {se}"));
    }
    Ok(format!("closed form within {:.2} SE of MC", (mean - exact).abs() / se))
}

fn check_predictive_normalization(master: u64) -> CheckResult {
    let mut rng = rng_for(master, 6);
    let sigma = SpdMatrix::identity(3);
    let tilde = sigma.to_psd();
    let y = DVector::from_row_slice(&[0.6, -0.2, 0.4]);
    let total = SpdMatrix::scaled_identity(3, 2.0).map_err(|e| e.to_string())?;

    // uniform predictive integrates to 1 against an importance proposal
    let proposal = SpdMatrix::scaled_identity(3, 4.0).map_err(|e| e.to_string())?;
    let n = 200_000;
    let mut sum = 0.0;
    for _ in 0..n {
        let x = mvn_sample(&y, &proposal, &mut rng);
        let lp = uniform_predictive_logpdf(&x, &y, &sigma, &tilde).map_err(|e| e.to_string())?;
        sum += (lp - mvn_logpdf(&x, &y, &proposal)).exp();
    }
    let uniform_integral = sum / n as f64;
    if (uniform_integral - 1.0).abs() > 0.01 {
        return Err(format!("uniform predictive integral {uniform_integral}"));
    }

    // Stein predictive propriety via draws from p_I
    for prior in [
        Prior::stein(3).map_err(|e| e.to_string())?,
        Prior::gaussian_ridge(3, 2.0).map_err(|e| e.to_string())?,
    ] {
        let pd = PredictiveDensity::with_rel_tol(y.clone(), sigma.clone(), tilde.clone(), prior, 1e-6)
            .map_err(|e| e.to_string())?;
        let n = 120_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let yt = mvn_sample(&y, &total, &mut rng);
            sum += (pd.logpdf(&yt).map_err(|e| e.to_string())? - mvn_logpdf(&yt, &y, &total)).exp();
        }
        let integral = sum / n as f64;
        if (integral - 1.0).abs() > 0.015 {
            return Err(format!("predictive integral {integral}"));
        }
    }
    Ok("uniform, Stein, and ridge predictives integrate to 1".to_string())
}

fn check_sampler_mean(master: u64) -> CheckResult {
    let mut rng = rng_for(master, 7);
    let sigma = SpdMatrix::identity(3);
    let tilde = SpdMatrix::scaled_identity(3, 2.0).map_err(|e| e.to_string())?.to_psd();
    let y = DVector::from_row_slice(&[1.5, -0.5, 0.0]);
    let pd = PredictiveDensity::with_rel_tol(
        y,
        sigma,
        tilde,
        Prior::stein(3).map_err(|e| e.to_string())?,
        1e-6,
    )
    .map_err(|e| e.to_string())?;
    let n = 10_000;
    let (samples, rate) = pd.sample_n(n, &mut rng).map_err(|e| e.to_string())?;
    let mut mean = DVector::zeros(3);
    for s in &samples {
        mean += s;
    }
    mean /= n as f64;
    let expect = pd.mean().map_err(|e| e.to_string())?;
    let se = (3.0f64 / n as f64).sqrt();
    for i in 0..3 {
        if (mean[i] - expect[i]).abs() > 3.5 * se {
            return Err(format!(
                "coordinate {i}: sample mean {} vs posterior mean {}",
                mean[i], expect[i]
            ));
        }
    }
    Ok(format!("sample mean matches posterior mean (acceptance rate {rate:.2})"))
}

fn check_astar_algebra(master: u64) -> CheckResult {
    let mut rng = rng_for(master, 8);
    for _ in 0..20 {
        let d = 4;
        let s1 = random_spd(d, &mut rng);
        let b = DesignDistribution::StdNormalEntries.sample_matrix(d, d, &mut rng);
        let s2 = SpdMatrix::new(s1.entries() + &b * b.transpose()).map_err(|e| e.to_string())?;
        let astar = build_astar(&s1, &s2).map_err(|e| e.to_string())?;
        let prod = astar.matrix() * astar.matrix().transpose();
        let diff = s2.entries() - s1.entries();
        if (prod - &diff).amax() > 1e-10 * diff.amax().max(1.0) {
            return Err("A* A*^T != S2 - S1".to_string());
        }
        let mu = standard_normal_vector(d, &mut rng);
        let (lhs, rhs) = rescaled_stein_identity_check(&s1, &s2, &mu).map_err(|e| e.to_string())?;
        if (lhs - rhs).abs() > 1e-9 {
            return Err(format!("rescaled Stein identity: {lhs} vs {rhs}"));
        }
    }
    Ok("A* A*^T and the rescaled Stein identity hold on 20 random pairs".to_string())
}

fn check_pseudo_inverse_consistency(master: u64) -> CheckResult {
    let mut rng = rng_for(master, 9);
    let s = random_spd(5, &mut rng);
    let p = s.to_psd();
    if !p.is_full_rank() {
        return Err("full-rank SPD detected as rank deficient".to_string());
    }
    let gap = (p.pseudo_inverse() - s.inverse()).amax();
    if gap > 1e-10 * s.inverse().amax() {
        return Err(format!("pseudo-inverse differs from inverse by {gap:.2e}"));
    }
    // combine with huge future variance returns Sigma_w ~= Sigma
    let tilde = PsdMatrix::new(DMatrix::identity(5, 5) * 1e6).map_err(|e| e.to_string())?;
    let stat = combine(&s, &tilde, &DVector::zeros(5), &DVector::zeros(5))
        .map_err(|e| e.to_string())?;
    let rel = (stat.sigma_w.entries() - s.entries()).amax() / s.entries().amax();
    if rel > 1e-4 {
        return Err(format!("Sigma_w drifted {rel:.2e} from Sigma under vanishing future info"));
    }
    Ok("pseudo-inverse matches inverse at full rank; combine limit holds".to_string())
}

fn check_risk_difference_identity(master: u64) -> CheckResult {
    let mut rng = rng_for(master, 10);
    let d = 3;
    let sigma = random_spd(d, &mut rng);
    let tilde = random_spd(d, &mut rng).to_psd();
    let mu = e1(d) * 0.8;
    let prior = Prior::stein(d).map_err(|e| e.to_string())?;
    let phi_path = risk_difference(&prior, &mu, &sigma, &tilde, 2000, &mut rng)
        .map_err(|e| e.to_string())?;
    let stein = direct_risk(
        &PredictiveSpec::Bayes(prior),
        &mu,
        &sigma,
        &tilde,
        300,
        150,
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    let uniform = direct_risk(
        &PredictiveSpec::Bayes(Prior::uniform(d)),
        &mu,
        &sigma,
        &tilde,
        3000,
        1,
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    let nested = stein.mean - uniform.mean;
    let se = (phi_path.std_error.powi(2) + stein.std_error.powi(2) + uniform.std_error.powi(2))
        .sqrt();
    if (phi_path.mean - nested).abs() > 3.5 * se {
        return Err(format!(
            "phi path {} vs nested {} (combined SE {se:.2e})",
            phi_path.mean, nested
        ));
    }
    // uniform prior: bit-exact zero with a shared seed
    let zero = risk_difference(&Prior::uniform(d), &mu, &sigma, &tilde, 100, &mut rng)
        .map_err(|e| e.to_string())?;
    if zero.mean != 0.0 || zero.std_error != 0.0 {
        return Err("uniform risk difference is not exactly zero".to_string());
    }
    Ok(format!(
        "phi path within {:.2} SE of nested oracle; uniform exactly 0",
        (phi_path.mean - nested).abs() / se
    ))
}

fn check_phi_monotonicity(master: u64) -> CheckResult {
    let prior = Prior::stein(3).map_err(|e| e.to_string())?;
    for mu in [DVector::zeros(3), e1(3) * 2.0] {
        let mut rng_a = rng_for(master, 11);
        let mut rng_b = rng_for(master, 11); // shared seed
        let big = phi_estimate(&prior, &mu, &SpdMatrix::scaled_identity(3, 2.0).unwrap(), 4000, &mut rng_a)
            .map_err(|e| e.to_string())?;
        let small = phi_estimate(&prior, &mu, &SpdMatrix::identity(3), 4000, &mut rng_b)
            .map_err(|e| e.to_string())?;
        let se = (big.std_error.powi(2) + small.std_error.powi(2)).sqrt();
        if !(big.mean < small.mean - 3.0 * se) {
            return Err(format!(
                "phi(mu, 2I) = {} not below phi(mu, I) = {} by 3 SE at |mu| = {}",
                big.mean,
                small.mean,
                mu.norm()
            ));
        }
    }
    Ok("phi decreases from v=1 to v=2 at mu in {0, 2 e1} beyond 3 SE".to_string())
}

fn check_finiteness_guard(_master: u64) -> CheckResult {
    for d in 3..=9usize {
        let cov = SpdMatrix::identity(d);
        let priors = vec![
            Prior::uniform(d),
            Prior::stein(d).map_err(|e| e.to_string())?,
            Prior::rescaled_stein(SpdMatrix::scaled_identity(d, 2.0).unwrap())
                .map_err(|e| e.to_string())?,
            Prior::gaussian_ridge(d, 10.0).map_err(|e| e.to_string())?,
            Prior::radial_from_log(d, std::sync::Arc::new(|r: f64| -0.5 * r * r), true),
        ];
        for prior in priors {
            let ev = MarginalEvaluator::auto(prior, cov.clone()).map_err(|e| e.to_string())?;
            for norm in [0.0, 1.0, 1e3] {
                let lm = ev.log_marginal(&(e1(d) * norm)).map_err(|e| e.to_string())?;
                if !lm.is_finite() {
                    return Err(format!("non-finite log marginal at d = {d}, |z| = {norm}"));
                }
            }
        }
    }
    Ok("log marginals finite for all priors, d = 3..9, |z| in {0, 1, 1e3}".to_string())
}

fn check_superharmonicity(master: u64) -> CheckResult {
    let mut rng = rng_for(master, 12);
    let stein = Prior::stein(3).map_err(|e| e.to_string())?;
    let points: Vec<DVector<f64>> = (0..10)
        .map(|_| standard_normal_vector(3, &mut rng).normalize())
        .collect();
    let laps = superharmonicity_check(&stein, &points, 1e-3).map_err(|e| e.to_string())?;
    if let Some(bad) = laps.iter().find(|l| l.abs() > 1e-4) {
        return Err(format!("Stein Laplacian {bad} away from origin"));
    }
    let ridge = Prior::gaussian_ridge(5, 1.0).map_err(|e| e.to_string())?;
    let ridge_lap = superharmonicity_check(&ridge, &[DVector::zeros(5)], 1e-4)
        .map_err(|e| e.to_string())?;
    if !(ridge_lap[0] < 0.0) {
        return Err(format!("ridge Laplacian at origin is {}", ridge_lap[0]));
    }
    let uniform = superharmonicity_check(&Prior::uniform(4), &[DVector::zeros(4)], 0.1)
        .map_err(|e| e.to_string())?;
    if uniform[0] != 0.0 {
        return Err("uniform prior Laplacian is not exactly zero".to_string());
    }
    Ok("Stein harmonic away from 0, ridge superharmonic, uniform flat".to_string())
}

fn check_posterior_shrinkage(_master: u64) -> CheckResult {
    let y = e1(5) * 10.0;
    let pm = posterior_mean(
        &Prior::stein(5).map_err(|e| e.to_string())?,
        &y,
        &SpdMatrix::identity(5),
    )
    .map_err(|e| e.to_string())?;
    let factor = pm.norm() / y.norm();
    if !(factor < 1.0 && factor > 1.0 - 3.0 / 100.0 - 0.01) {
        return Err(format!("shrinkage factor {factor} outside the James-Stein window"));
    }
    Ok(format!("far-field shrinkage factor {factor:.5}"))
}

fn check_regression_reduction(master: u64) -> CheckResult {
    let mut rng = rng_for(master, 13);
    // worked example: MLE (1, 1, 0)
    let r3 = 3.0f64.sqrt() / 2.0;
    let x = DMatrix::from_columns(&[
        DVector::from_row_slice(&[r3, 0.5, 0.0]),
        DVector::from_row_slice(&[r3, -0.5, 0.0]),
        DVector::from_row_slice(&[0.0, 0.0, 1.0]),
    ]);
    let y = DVector::from_row_slice(&[r3 + 0.5, r3 - 0.5, 0.0]);
    let data = RegressionData::new(x, y, 1.0).map_err(|e| e.to_string())?;
    let reduced = reduce(&data).map_err(|e| e.to_string())?;
    let expect = DVector::from_row_slice(&[1.0, 1.0, 0.0]);
    if (&reduced.y1 - &expect).amax() > 1e-10 {
        return Err(format!("example MLE {:?}", reduced.y1.as_slice()));
    }

    // normal equations and the ridge lambda map on random data
    let x = DesignDistribution::StdNormalEntries.sample_matrix(3, 9, &mut rng);
    let y = standard_normal_vector(9, &mut rng);
    let data = RegressionData::new(x.clone(), y.clone(), 2.0).map_err(|e| e.to_string())?;
    let reduced = reduce(&data).map_err(|e| e.to_string())?;
    if (&x * (&y - x.transpose() * &reduced.y1)).amax() > 1e-8 {
        return Err("normal equations violated".to_string());
    }
    let lambda = 3.0;
    let ridge = ridge_estimator(&data, lambda).map_err(|e| e.to_string())?;
    let prior = Prior::gaussian_ridge(3, lambda / 2.0).map_err(|e| e.to_string())?;
    let pm = posterior_mean(&prior, &reduced.y1, &reduced.sigma).map_err(|e| e.to_string())?;
    if (&ridge - &pm).amax() > 1e-8 {
        return Err("ridge estimator does not match the reduced posterior mean".to_string());
    }

    // A* regression prior on a full-rank future design
    let fd = FutureDesign::new(
        DesignDistribution::StdNormalEntries.sample_matrix(3, 8, &mut rng),
        1.0,
    )
    .map_err(|e| e.to_string())?;
    let (prior, astar) = astar_regression_prior(&data, &fd).map_err(|e| e.to_string())?;
    let future = reduce_future(&fd).map_err(|e| e.to_string())?;
    let sigma_w = shrinkage_core::combine_cov(&reduced.sigma, &future.sigma_tilde)
        .map_err(|e| e.to_string())?;
    let diff = reduced.sigma.entries() - sigma_w.entries();
    let prod = astar.matrix() * astar.matrix().transpose();
    if (prod - &diff).amax() > 1e-10 * diff.amax().max(1.0) {
        return Err("A* A*^T != Sigma - Sigma_w for the regression instance".to_string());
    }
    let beta = standard_normal_vector(3, &mut rng);
    let lhs = log_prior(&prior, &(astar.matrix() * &beta)).map_err(|e| e.to_string())?;
    let rhs = log_prior(&Prior::stein(3).unwrap(), &beta).map_err(|e| e.to_string())?;
    if (lhs - rhs).abs() > 1e-9 {
        return Err("regression A* prior identity failed".to_string());
    }
    Ok("example MLE, normal equations, ridge map, and A* instance verified".to_string())
}

fn check_semidefinite_sampling(master: u64) -> CheckResult {
    let mut rng = rng_for(master, 14);
    let cov = PsdMatrix::new(DMatrix::from_diagonal(&DVector::from_row_slice(&[
        2.0, 0.0, 0.0,
    ])))
    .map_err(|e| e.to_string())?;
    let mean = DVector::from_row_slice(&[0.0, 3.0, -1.0]);
    let n = 50_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let s = semidefinite_normal_sample(&mean, &cov, &mut rng);
        if s[1] != 3.0 || s[2] != -1.0 {
            return Err("sample left the support".to_string());
        }
        acc += (s[0] - mean[0]) * (s[0] - mean[0]);
    }
    let var = acc / n as f64;
    let se = (2.0 * 4.0 / n as f64).sqrt(); // Var(x^2) = 2 sigma^4
    if (var - 2.0).abs() > 4.0 * se {
        return Err(format!("support variance {var} vs 2.0"));
    }
    Ok("samples pinned to the support with matching variance".to_string())
}

fn check_seed_substream(master: u64) -> CheckResult {
    let draws = |path: &[u64]| -> Vec<u64> {
        use rand::RngCore;
        let mut rng = seed_substream(master, path);
        (0..100).map(|_| rng.next_u64()).collect()
    };
    if draws(&[0]) != draws(&[0]) {
        return Err("identical paths produced different streams".to_string());
    }
    if draws(&[0]) == draws(&[1]) {
        return Err("distinct paths produced identical streams".to_string());
    }
    Ok("substream derivation deterministic and path sensitive".to_string())
}

pub fn run(_config: &crate::config::ExperimentConfig, ctx: &RunContext) -> Result<(), crate::CliError> {
    let started = Instant::now();
    let master = ctx.master_seed;
    let checks: Vec<(&str, Box<dyn Fn(u64) -> CheckResult + Send + Sync>)> = vec![
        ("marginal_quadrature_vs_mc", Box::new(check_marginal_quadrature_vs_mc)),
        ("marginal_far_field", Box::new(check_marginal_far_field)),
        ("lemma2_ratio_vs_direct", Box::new(check_lemma2_ratio_vs_direct)),
        ("lemma4_fd_identity", Box::new(check_lemma4_fd_identity)),
        ("conjugate_closed_forms", Box::new(check_conjugate_closed_forms)),
        ("gaussian_kl_oracle", Box::new(check_gaussian_kl_oracle)),
        ("predictive_normalization", Box::new(check_predictive_normalization)),
        ("sampler_mean_vs_posterior_mean", Box::new(check_sampler_mean)),
        ("astar_algebra", Box::new(check_astar_algebra)),
        ("pseudo_inverse_consistency", Box::new(check_pseudo_inverse_consistency)),
        ("risk_difference_identity", Box::new(check_risk_difference_identity)),
        ("phi_monotonicity", Box::new(check_phi_monotonicity)),
        ("finiteness_guard", Box::new(check_finiteness_guard)),
        ("superharmonicity_numeric", Box::new(check_superharmonicity)),
        ("posterior_mean_shrinkage", Box::new(check_posterior_shrinkage)),
        ("regression_reduction", Box::new(check_regression_reduction)),
        ("semidefinite_sampling", Box::new(check_semidefinite_sampling)),
        ("seed_substream_determinism", Box::new(check_seed_substream)),
    ];

    use rayon::prelude::*;
    let results: Vec<(&str, CheckResult)> = checks
        .par_iter()
        .map(|(name, check)| (*name, check(master)))
        .collect();

    let mut failures = 0usize;
    for (name, result) in &results {
        match result {
            Ok(detail) => println!("selftest {name:<32} ok    {detail}"),
            Err(reason) => {
                failures += 1;
                println!("selftest {name:<32} FAIL  {reason}");
            }
        }
    }
    println!(
        "selftest: {} checks, {} failed, {:.1}s",
        results.len(),
        failures,
        started.elapsed().as_secs_f64()
    );
    if failures > 0 {
        return Err(crate::CliError::SelftestFailed(failures));
    }
    Ok(())
}
