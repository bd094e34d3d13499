//! Experiment implementations behind the CLI subcommands.
//!
//! Every experiment resolves its configuration against figure defaults,
//! derives all randomness from `seed_substream(master, path)` so results are
//! independent of worker count, and writes one CSV plus a JSON metadata
//! sidecar.

pub mod astar_surface;
pub mod compare_densities;
pub mod fit_lines;
pub mod predictive_cdf;
pub mod risk_curve;
pub mod selftest;

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use shrinkage_core::regression::{reduce, ReducedProblem, RegressionData};
use shrinkage_core::{DesignDistribution, Error as CoreError};

use crate::config::ExperimentConfig;
use crate::output::Metadata;

/// Substream namespace roots, one per experiment.
pub mod seed_ns {
    pub const FIT_LINES: u64 = 1;
    pub const PREDICTIVE_CDF: u64 = 2;
    pub const RISK_CURVE: u64 = 3;
    pub const COMPARE_DENSITIES: u64 = 4;
    pub const SELFTEST: u64 = 5;
}

/// Run-wide settings assembled by the CLI.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub master_seed: u64,
    pub out_dir: PathBuf,
    pub paper_scale: bool,
    pub workers: usize,
    pub intercept: bool,
}

impl RunContext {
    /// Outer replication count: desk-scale default, `--paper-scale` restores
    /// the paper's 10^4.
    pub fn outer_reps(&self, config_reps: Option<usize>) -> usize {
        match config_reps {
            Some(r) => r,
            None if self.paper_scale => 10_000,
            None => 1_000,
        }
    }
}

/// One drawn regression dataset after reduction.
pub struct DrawnDataset {
    pub reduced: ReducedProblem,
    pub xxt: DMatrix<f64>,
}

/// Draws `X` (`d x p`, i.i.d. entries), simulates `y = X^T beta + eps`, and
/// reduces. With `intercept`, a constant coordinate is appended to every
/// sample and `intercept_value` to `beta`.
pub fn draw_dataset<R: Rng + ?Sized>(
    d: usize,
    p: usize,
    design: DesignDistribution,
    sigma2: f64,
    beta: &DVector<f64>,
    intercept: Option<f64>,
    rng: &mut R,
) -> Result<DrawnDataset, CoreError> {
    let x = design.sample_matrix(d, p, rng);
    let (x, beta_eff) = match intercept {
        Some(b0) => {
            let mut xi = DMatrix::zeros(d + 1, p);
            xi.view_mut((0, 0), (d, p)).copy_from(&x);
            for j in 0..p {
                xi[(d, j)] = 1.0;
            }
            let beta_eff = DVector::from_fn(d + 1, |i, _| if i < d { beta[i] } else { b0 });
            (xi, beta_eff)
        }
        None => (x, beta.clone()),
    };
    let noise = shrinkage_core::gaussian::standard_normal_vector(p, rng) * sigma2.sqrt();
    let y = x.transpose() * &beta_eff + noise;
    let data = RegressionData::new(x.clone(), y, sigma2)?;
    let reduced = reduce(&data)?;
    Ok(DrawnDataset {
        reduced,
        xxt: &x * x.transpose(),
    })
}

/// Training CSV: header `x1,...,xd,y`, one row per sample. Returns the
/// `d x p` design (samples as columns) and the target vector.
pub fn load_regression_csv(path: &Path) -> Result<(DMatrix<f64>, DVector<f64>), String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or("empty CSV")?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols.last() != Some(&"y") {
        return Err(format!(
            "training CSV header must be x1,...,xd,y; got '{header}'"
        ));
    }
    let d = cols.len() - 1;
    let mut samples: Vec<DVector<f64>> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 1 {
            return Err(format!("row {} has {} fields, expected {}", i + 2, fields.len(), d + 1));
        }
        let values: Vec<f64> = fields
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| format!("row {}: {e}", i + 2)))
            .collect::<Result<_, _>>()?;
        samples.push(DVector::from_row_slice(&values[..d]));
        targets.push(values[d]);
    }
    if samples.is_empty() {
        return Err("training CSV has no data rows".to_string());
    }
    Ok((
        DMatrix::from_columns(&samples),
        DVector::from_vec(targets),
    ))
}

/// Future-design CSV: header `x1,...,xd`, one row per future sample.
pub fn load_future_csv(path: &Path) -> Result<DMatrix<f64>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or("empty CSV")?;
    let d = header.split(',').count();
    let mut samples: Vec<DVector<f64>> = Vec::new();
    for (i, line) in lines.enumerate() {
        let values: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|e| format!("row {}: {e}", i + 2)))
            .collect::<Result<_, _>>()?;
        if values.len() != d {
            return Err(format!("row {} has {} fields, expected {d}", i + 2, values.len()));
        }
        samples.push(DVector::from_vec(values));
    }
    if samples.is_empty() {
        return Err("future CSV has no data rows".to_string());
    }
    Ok(DMatrix::from_columns(&samples))
}

/// Assembles the metadata sidecar.
pub fn build_metadata(
    ctx: &RunContext,
    tag: &str,
    resolved: &ExperimentConfig,
    notes: Vec<String>,
    started: Instant,
) -> Metadata {
    Metadata {
        library_version: env!("CARGO_PKG_VERSION"),
        experiment: tag.to_string(),
        master_seed: ctx.master_seed,
        workers: ctx.workers,
        resolved_config: serde_json::to_value(resolved).unwrap_or(serde_json::Value::Null),
        notes,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        finished_at_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    }
}

/// Mean and standard error over replications.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}
