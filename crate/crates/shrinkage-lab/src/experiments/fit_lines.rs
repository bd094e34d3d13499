//! `fit-lines`: per-seed fitted regression coefficients under the uniform
//! and shrinkage priors, the data behind the fitted-line comparison plots.
//!
//! For each replication a design `X` and targets `y` are drawn, the problem
//! is reduced, and each prior's posterior mean coefficient vector is
//! recorded. The `density` column carries `<prior>.slope` (first
//! coefficient) and, with `--intercept`, `<prior>.intercept` (the appended
//! constant coordinate).

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use shrinkage_core::marginal::posterior_mean;
use shrinkage_core::seed_substream;

use crate::config::{BetaSpec, DensityConfig, DesignName, DimSpec, ExperimentConfig};
use crate::experiments::{build_metadata, draw_dataset, seed_ns, RunContext};
use crate::output::{write_outputs, ResultRow};

const TAG: &str = "fit-lines";

struct Resolved {
    d: usize,
    p: usize,
    beta: DVector<f64>,
    design: DesignName,
    sigma2: f64,
    densities: Vec<DensityConfig>,
    seeds: usize,
    intercept: Option<f64>,
}

fn resolve(config: &ExperimentConfig, ctx: &RunContext) -> Result<Resolved, String> {
    let dims = config.d.clone().unwrap_or(DimSpec::One(5)).to_vec();
    if dims.len() != 1 {
        return Err("fit-lines runs at a single dimension".to_string());
    }
    let d = dims[0];
    let beta = match &config.beta {
        None => crate::config::beta_from_norm(d, 1.0),
        Some(BetaSpec::Vector { vector }) => {
            if vector.len() != d {
                return Err(format!("beta vector has length {}, expected {d}", vector.len()));
            }
            DVector::from_row_slice(vector)
        }
        Some(BetaSpec::Norms { norms }) => {
            if norms.len() != 1 {
                return Err("fit-lines takes a single beta".to_string());
            }
            crate::config::beta_from_norm(d, norms[0])
        }
    };
    let densities = config.priors.clone().unwrap_or_else(|| {
        vec![
            DensityConfig::Uniform,
            DensityConfig::RescaledStein {
                sigma_star: Default::default(),
            },
        ]
    });
    let intercept = if ctx.intercept || config.intercept == Some(true) {
        Some(1.0)
    } else {
        None
    };
    let d_eff = d + intercept.is_some() as usize;
    for dens in &densities {
        dens.validate_at_dim(d_eff)?;
        if matches!(dens, DensityConfig::Plugin | DensityConfig::RidgePlugin { .. }) {
            return Err("plug-in densities are not priors; they have no posterior mean".to_string());
        }
    }
    let seeds = config.reps.unwrap_or(20);
    if seeds < 2 {
        return Err(format!("reps (seed count) must be >= 2, got {seeds}"));
    }
    Ok(Resolved {
        d,
        p: config.p.unwrap_or(10),
        beta,
        design: config.design.unwrap_or(DesignName::UniformPm1),
        sigma2: config.sigma2.unwrap_or(1.0),
        densities,
        seeds,
        intercept,
    })
}

fn replicate(r: &Resolved, seed_idx: usize, master: u64) -> Result<Vec<ResultRow>, String> {
    let mut rng = seed_substream(master, &[seed_ns::FIT_LINES, seed_idx as u64]);
    let drawn = draw_dataset(
        r.d,
        r.p,
        r.design.to_core(),
        r.sigma2,
        &r.beta,
        r.intercept,
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    let d_eff = drawn.reduced.sigma.dim();
    let mut rows = Vec::new();
    for dens in &r.densities {
        let prior = dens
            .resolve_prior(d_eff, &drawn.reduced.sigma, &drawn.xxt)
            .map_err(|e| e.to_string())?
            .expect("plugin rejected in resolve");
        let estimate = posterior_mean(&prior, &drawn.reduced.y1, &drawn.reduced.sigma)
            .map_err(|e| e.to_string())?;
        rows.push(ResultRow::new(
            TAG,
            d_eff,
            r.beta.norm(),
            &format!("{}.slope", dens.label()),
            estimate[0],
            0.0,
            1,
            seed_idx as u64,
        ));
        if r.intercept.is_some() {
            rows.push(ResultRow::new(
                TAG,
                d_eff,
                r.beta.norm(),
                &format!("{}.intercept", dens.label()),
                estimate[d_eff - 1],
                0.0,
                1,
                seed_idx as u64,
            ));
        }
    }
    Ok(rows)
}

pub fn run(config: &ExperimentConfig, ctx: &RunContext) -> Result<(), crate::CliError> {
    let started = Instant::now();
    let r = resolve(config, ctx).map_err(crate::CliError::Config)?;

    let per_seed: Vec<Result<Vec<ResultRow>, String>> = (0..r.seeds)
        .into_par_iter()
        .map(|s| replicate(&r, s, ctx.master_seed))
        .collect();

    let mut rows = Vec::new();
    for (seed_idx, result) in per_seed.into_iter().enumerate() {
        match result {
            Ok(mut seed_rows) => rows.append(&mut seed_rows),
            Err(err) => {
                for dens in &r.densities {
                    rows.push(ResultRow::error_row(
                        TAG,
                        r.d,
                        r.beta.norm(),
                        &format!("{}.slope", dens.label()),
                        seed_idx as u64,
                        &err,
                    ));
                }
            }
        }
    }

    let mut resolved_echo = config.clone();
    resolved_echo.experiment = Some(crate::config::ExperimentTag::FitLines);
    resolved_echo.reps = Some(r.seeds);
    let mut notes = vec![
        "seed column is the replication index under the master seed".into(),
        "slope is the first posterior-mean coefficient; the fitted line is y = beta_hat^T x".into(),
        "sigma_star default 'train_cov' follows the Sigma = sigma^2 (X X^T)^{-1} rescaling; pass 'xxt' for the X X^T variant".into(),
    ];
    if r.intercept.is_some() {
        notes.push("intercept model: constant coordinate appended; true intercept 1.0".into());
    }
    let metadata = build_metadata(ctx, TAG, &resolved_echo, notes, started);
    write_outputs(&ctx.out_dir, TAG, &rows, &metadata)
        .map_err(|e| crate::CliError::Io(e.to_string()))?;
    Ok(())
}
