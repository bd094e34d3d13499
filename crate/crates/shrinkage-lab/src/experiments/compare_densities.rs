//! `compare-densities`: absolute Kullback-Leibler risk of several predictive
//! densities over a `||beta||` grid, with designs drawn per replication.
//!
//! Uniform, ridge, and plug-in risks integrate in closed form per
//! `(Sigma, Sigma~)` draw; Stein-type risks use the exact uniform value plus
//! the phi-identity Monte Carlo difference with shared inner draws.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use shrinkage_core::marginal::MarginalEvaluator;
use shrinkage_core::risk::{plugin_risk_exact, ridge_plugin_risk_exact, ridge_risk_exact, uniform_risk_exact};
use shrinkage_core::{combine_cov, seed_substream, PsdMatrix, SpdMatrix};

use crate::config::{beta_from_norm, BetaSpec, DensityConfig, DesignName, DimSpec, ExperimentConfig};
use crate::experiments::{build_metadata, mean_se, seed_ns, RunContext};
use crate::output::{write_outputs, ResultRow};

const TAG: &str = "compare-densities";

struct Resolved {
    d: usize,
    norms: Vec<f64>,
    p: usize,
    p_tilde: usize,
    design: DesignName,
    sigma2: f64,
    sigma2_tilde: f64,
    densities: Vec<DensityConfig>,
    reps: usize,
    inner: usize,
    quad_rel_tol: f64,
}

fn resolve(config: &ExperimentConfig, ctx: &RunContext) -> Result<Resolved, String> {
    let dims = config.d.clone().unwrap_or(DimSpec::One(5)).to_vec();
    if dims.len() != 1 {
        return Err("compare-densities runs at a single dimension".to_string());
    }
    let d = dims[0];
    let norms = match &config.beta {
        None => vec![0.0, 0.5, 1.0, 1.5, 2.0],
        Some(BetaSpec::Norms { norms }) => norms.clone(),
        Some(BetaSpec::Vector { .. }) => {
            return Err("compare-densities sweeps ||beta||; use beta.norms".to_string())
        }
    };
    // default five densities: the ridge entries are the classical plug-in
    // ridge predictions (point estimate + future noise), whose risk blows
    // past the MLE plug-in as ||beta|| grows; the fully Bayesian ridge
    // predictive is available as {"type": "ridge"}
    let mut densities = config.priors.clone().unwrap_or_else(|| {
        vec![
            DensityConfig::Uniform,
            DensityConfig::RescaledStein {
                sigma_star: Default::default(),
            },
            DensityConfig::RidgePlugin { lambda: 10.0 },
            DensityConfig::RidgePlugin {
                lambda: 10.0f64.sqrt(),
            },
            DensityConfig::Plugin,
        ]
    });
    if let Some(lambdas) = &config.lambdas {
        for &lambda in lambdas {
            densities.push(DensityConfig::Ridge { lambda });
        }
    }
    if norms.is_empty() || densities.is_empty() {
        return Err("beta norms and densities must be nonempty".to_string());
    }
    for dens in &densities {
        dens.validate_at_dim(d)?;
        if matches!(dens, DensityConfig::Stein) {
            // plain (unrescaled) Stein is fine too; nothing to reject
        }
    }
    let p_tilde = config.p_tilde.or(config.p).unwrap_or(10);
    if p_tilde < d {
        return Err(format!(
            "compare-densities needs a full-rank future design (p_tilde >= d), got {p_tilde} < {d}"
        ));
    }
    let reps = ctx.outer_reps(config.reps);
    if reps < 2 {
        return Err(format!("reps must be >= 2, got {reps}"));
    }
    Ok(Resolved {
        d,
        norms,
        p: config.p.unwrap_or(10),
        p_tilde,
        design: config.design.unwrap_or(DesignName::StdNormalEntries),
        sigma2: config.sigma2.unwrap_or(1.0),
        sigma2_tilde: config.sigma2_tilde.unwrap_or(1.0),
        densities,
        reps,
        inner: config.mc_n.unwrap_or(10_000),
        quad_rel_tol: config.quad_rel_tol.unwrap_or(1e-8),
    })
}

/// Risk values for one `(X, X~)` draw: `values[density][point]`.
fn replicate(r: &Resolved, rep: usize, master: u64) -> Result<Vec<Vec<f64>>, shrinkage_core::Error> {
    let mut rng = seed_substream(master, &[seed_ns::COMPARE_DENSITIES, rep as u64]);
    let design = r.design.to_core();
    let d = r.d;
    let x = design.sample_matrix(d, r.p, &mut rng);
    let x_tilde = design.sample_matrix(d, r.p_tilde, &mut rng);
    let xxt = &x * x.transpose();
    let gram = PsdMatrix::new(xxt.clone())?;
    let sigma = SpdMatrix::new(gram.pseudo_inverse() * r.sigma2)?;
    let future_gram = PsdMatrix::new(&x_tilde * x_tilde.transpose())?;
    let sigma_tilde = SpdMatrix::new(future_gram.pseudo_inverse() * r.sigma2_tilde)?;

    let uniform_risk = uniform_risk_exact(&sigma, &sigma_tilde)?;
    let plugin_risk = plugin_risk_exact(&sigma, &sigma_tilde.to_psd());

    // shared inner draws for the Stein-type phi difference
    let needs_mc = r
        .densities
        .iter()
        .any(|dn| matches!(dn, DensityConfig::Stein | DensityConfig::RescaledStein { .. }));
    let (sigma_w, shifts) = if needs_mc {
        let sigma_w = combine_cov(&sigma, &sigma_tilde.to_psd())?;
        let shifts: Vec<(DVector<f64>, DVector<f64>)> = (0..r.inner)
            .map(|_| {
                let xi = shrinkage_core::gaussian::standard_normal_vector(d, &mut rng);
                (sigma.sqrt() * &xi, sigma_w.sqrt() * xi)
            })
            .collect();
        (Some(sigma_w), shifts)
    } else {
        (None, Vec::new())
    };

    let mut out = Vec::with_capacity(r.densities.len());
    for dens in &r.densities {
        let mut per_point = Vec::with_capacity(r.norms.len());
        match dens {
            DensityConfig::Uniform => {
                per_point.resize(r.norms.len(), uniform_risk);
            }
            DensityConfig::Plugin => {
                per_point.resize(r.norms.len(), plugin_risk);
            }
            DensityConfig::Ridge { lambda } => {
                for &norm in &r.norms {
                    let beta = beta_from_norm(d, norm);
                    per_point.push(ridge_risk_exact(&beta, &sigma, &sigma_tilde, *lambda)?);
                }
            }
            DensityConfig::RidgePlugin { lambda } => {
                for &norm in &r.norms {
                    let beta = beta_from_norm(d, norm);
                    per_point.push(ridge_plugin_risk_exact(&beta, &sigma, &sigma_tilde, *lambda)?);
                }
            }
            DensityConfig::Stein | DensityConfig::RescaledStein { .. } => {
                let prior = dens
                    .resolve_prior(d, &sigma, &xxt)?
                    .expect("stein variants have priors");
                let sigma_w = sigma_w.as_ref().expect("built for MC densities");
                let ev =
                    MarginalEvaluator::with_rel_tol(prior.clone(), sigma.clone(), r.quad_rel_tol)?;
                let ev_w =
                    MarginalEvaluator::with_rel_tol(prior, sigma_w.clone(), r.quad_rel_tol)?;
                for &norm in &r.norms {
                    let beta = beta_from_norm(d, norm);
                    let mut acc = 0.0;
                    for (s, s_w) in &shifts {
                        // R(pi) = R(pi_I) + phi(Sigma) - phi(Sigma_w)
                        acc += ev.log_marginal(&(&beta + s))?
                            - ev_w.log_marginal(&(&beta + s_w))?;
                    }
                    per_point.push(uniform_risk + acc / r.inner as f64);
                }
            }
        }
        out.push(per_point);
    }
    Ok(out)
}

pub fn run(config: &ExperimentConfig, ctx: &RunContext) -> Result<(), crate::CliError> {
    let started = Instant::now();
    let r = resolve(config, ctx).map_err(crate::CliError::Config)?;

    let per_rep: Vec<Result<Vec<Vec<f64>>, shrinkage_core::Error>> = (0..r.reps)
        .into_par_iter()
        .map(|rep| replicate(&r, rep, ctx.master_seed))
        .collect();

    let mut rows: Vec<ResultRow> = Vec::new();
    if let Some(err) = per_rep.iter().find_map(|res| res.as_ref().err()) {
        for dens in &r.densities {
            for &norm in &r.norms {
                rows.push(ResultRow::error_row(
                    TAG,
                    r.d,
                    norm,
                    &dens.label(),
                    ctx.master_seed,
                    &err.to_string(),
                ));
            }
        }
    } else {
        let values: Vec<&Vec<Vec<f64>>> = per_rep.iter().map(|res| res.as_ref().unwrap()).collect();
        for (dens_idx, dens) in r.densities.iter().enumerate() {
            for (point_idx, &norm) in r.norms.iter().enumerate() {
                let series: Vec<f64> = values.iter().map(|v| v[dens_idx][point_idx]).collect();
                let (mean, se) = mean_se(&series);
                rows.push(ResultRow::new(
                    TAG,
                    r.d,
                    norm,
                    &dens.label(),
                    mean,
                    se,
                    r.reps,
                    ctx.master_seed,
                ));
            }
        }
    }

    let mut resolved_echo = config.clone();
    resolved_echo.experiment = Some(crate::config::ExperimentTag::CompareDensities);
    resolved_echo.reps = Some(r.reps);
    resolved_echo.mc_n = Some(r.inner);
    let notes = vec![
        "estimate column is the absolute KL risk R_KL of each predictive density".into(),
        "uniform, ridge, plug-in risks are exact per draw; Stein-type adds a phi-difference MC term".into(),
        format!("substream path [{}, rep]", seed_ns::COMPARE_DENSITIES),
    ];
    let metadata = build_metadata(ctx, TAG, &resolved_echo, notes, started);
    write_outputs(&ctx.out_dir, TAG, &rows, &metadata)
        .map_err(|e| crate::CliError::Io(e.to_string()))?;
    Ok(())
}
