//! Experiment configuration: a single JSON document with experiment-specific
//! defaults. Unknown keys are errors.

use std::fmt;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use shrinkage_core::{Prior, SpdMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentTag {
    FitLines,
    PredictiveCdf,
    RiskCurve,
    CompareDensities,
    AstarSurface,
    Selftest,
}

impl ExperimentTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentTag::FitLines => "fit-lines",
            ExperimentTag::PredictiveCdf => "predictive-cdf",
            ExperimentTag::RiskCurve => "risk-curve",
            ExperimentTag::CompareDensities => "compare-densities",
            ExperimentTag::AstarSurface => "astar-surface",
            ExperimentTag::Selftest => "selftest",
        }
    }
}

impl fmt::Display for ExperimentTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One dimension or a sweep over several.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DimSpec {
    One(usize),
    Many(Vec<usize>),
}

impl DimSpec {
    pub fn to_vec(&self) -> Vec<usize> {
        match self {
            DimSpec::One(d) => vec![*d],
            DimSpec::Many(v) => v.clone(),
        }
    }
}

/// Mean parameter: an explicit vector or a norm grid along `e1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaSpec {
    Vector { vector: Vec<f64> },
    Norms { norms: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignName {
    UniformPm1,
    StdNormalEntries,
}

impl DesignName {
    pub fn to_core(self) -> shrinkage_core::DesignDistribution {
        match self {
            DesignName::UniformPm1 => shrinkage_core::DesignDistribution::UniformPm1,
            DesignName::StdNormalEntries => shrinkage_core::DesignDistribution::StdNormalEntries,
        }
    }
}

/// Rescaling matrix choice for the rescaled Stein prior.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaStarSpec {
    Named(SigmaStarName),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaStarName {
    /// `Sigma = sigma^2 (X X^T)^{-1}`, the reduced-model training covariance.
    TrainCov,
    /// `X X^T` itself.
    Xxt,
}

impl Default for SigmaStarSpec {
    fn default() -> Self {
        SigmaStarSpec::Named(SigmaStarName::TrainCov)
    }
}

impl SigmaStarSpec {
    /// Resolves against the training quantities of one dataset draw.
    pub fn resolve(
        &self,
        sigma: &SpdMatrix,
        xxt: &DMatrix<f64>,
    ) -> Result<SpdMatrix, shrinkage_core::Error> {
        match self {
            SigmaStarSpec::Named(SigmaStarName::TrainCov) => Ok(sigma.clone()),
            SigmaStarSpec::Named(SigmaStarName::Xxt) => SpdMatrix::new(xxt.clone()),
            SigmaStarSpec::Matrix(rows) => {
                let d = rows.len();
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                if flat.len() != d * d {
                    return Err(shrinkage_core::Error::InvalidParameter {
                        name: "sigma_star",
                        reason: "matrix rows must form a square matrix".to_string(),
                    });
                }
                SpdMatrix::new(DMatrix::from_row_slice(d, d, &flat))
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            SigmaStarSpec::Named(SigmaStarName::TrainCov) => "train_cov".to_string(),
            SigmaStarSpec::Named(SigmaStarName::Xxt) => "xxt".to_string(),
            SigmaStarSpec::Matrix(_) => "explicit".to_string(),
        }
    }
}

/// Density (prior or plug-in) entry of the experiment's comparison list.
fn trim_float(x: f64) -> String {
    let mut s = format!("{x:.4}");
    while s.contains('.') && (s.ends_with('0') || s.ends_with('.')) {
        s.pop();
    }
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    Uniform,
    Stein,
    RescaledStein {
        #[serde(default)]
        sigma_star: SigmaStarSpec,
    },
    Ridge {
        lambda: f64,
    },
    /// Plug-in at the ridge point estimate `beta_RR`; the classical ridge
    /// prediction with future noise only.
    RidgePlugin {
        lambda: f64,
    },
    /// Plug-in of the MLE; only meaningful for risk comparisons.
    Plugin,
}

impl DensityConfig {
    pub fn label(&self) -> String {
        match self {
            DensityConfig::Uniform => "uniform".to_string(),
            DensityConfig::Stein => "stein".to_string(),
            DensityConfig::RescaledStein { .. } => "stein_rescaled".to_string(),
            DensityConfig::Ridge { lambda } => format!("ridge_{}", trim_float(*lambda)),
            DensityConfig::RidgePlugin { lambda } => {
                format!("ridge_plugin_{}", trim_float(*lambda))
            }
            DensityConfig::Plugin => "plugin".to_string(),
        }
    }

    /// Builds the prior at dimension `d`, given the per-draw training
    /// quantities; `Plugin` has no prior.
    pub fn resolve_prior(
        &self,
        d: usize,
        sigma: &SpdMatrix,
        xxt: &DMatrix<f64>,
    ) -> Result<Option<Prior>, shrinkage_core::Error> {
        Ok(match self {
            DensityConfig::Uniform => Some(Prior::uniform(d)),
            DensityConfig::Stein => Some(Prior::stein(d)?),
            DensityConfig::RescaledStein { sigma_star } => {
                Some(Prior::rescaled_stein(sigma_star.resolve(sigma, xxt)?)?)
            }
            DensityConfig::Ridge { lambda } => Some(Prior::gaussian_ridge(d, *lambda)?),
            DensityConfig::RidgePlugin { .. } | DensityConfig::Plugin => None,
        })
    }

    /// Constructibility check at dimension `d` without data.
    pub fn validate_at_dim(&self, d: usize) -> Result<(), String> {
        match self {
            DensityConfig::Stein | DensityConfig::RescaledStein { .. } if d < 3 => Err(format!(
                "{} prior requires d >= 3, got {d}",
                self.label()
            )),
            DensityConfig::Ridge { lambda } | DensityConfig::RidgePlugin { lambda }
                if !(*lambda > 0.0) =>
            {
                Err(format!("ridge lambda must be positive, got {lambda}"))
            }
            DensityConfig::RescaledStein {
                sigma_star: SigmaStarSpec::Matrix(rows),
            } if rows.len() != d => Err(format!(
                "explicit sigma_star is {}x{} but d = {d}",
                rows.len(),
                rows.len()
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl AxisSpec {
    pub fn points(&self) -> Vec<f64> {
        if self.n <= 1 {
            return vec![self.min];
        }
        (0..self.n)
            .map(|i| self.min + (self.max - self.min) * i as f64 / (self.n - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x1: AxisSpec,
    pub x2: AxisSpec,
}

/// The JSON configuration document. Every field is optional; experiments
/// fill in their figure defaults and record them in the metadata sidecar.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentTag>,
    pub d: Option<DimSpec>,
    pub p: Option<usize>,
    pub p_tilde: Option<usize>,
    pub beta: Option<BetaSpec>,
    pub design: Option<DesignName>,
    pub sigma2: Option<f64>,
    pub sigma2_tilde: Option<f64>,
    pub priors: Option<Vec<DensityConfig>>,
    /// Extra ridge regularization parameters appended to the density list.
    pub lambdas: Option<Vec<f64>>,
    /// Outer replication count.
    pub reps: Option<usize>,
    /// Inner Monte Carlo draws per replication.
    pub mc_n: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Future point for `predictive-cdf` (defaults to `e1`).
    pub x_tilde: Option<Vec<f64>>,
    /// Predictive sample count for `predictive-cdf`.
    pub samples: Option<usize>,
    /// Evaluation grid for `astar-surface`.
    pub grid: Option<GridSpec>,
    /// Training data CSV (columns `x1..xd,y`) for regression experiments.
    pub data_csv: Option<PathBuf>,
    /// Future design CSV (columns `x1..xd`).
    pub future_csv: Option<PathBuf>,
    pub intercept: Option<bool>,
    pub quad_rel_tol: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("invalid config: {e}"))
    }

    /// Checks the tag recorded in the file against the subcommand.
    pub fn check_tag(&self, expected: ExperimentTag) -> Result<(), String> {
        match self.experiment {
            Some(tag) if tag != expected => Err(format!(
                "config is for experiment '{tag}', but '{expected}' was requested"
            )),
            _ => Ok(()),
        }
    }
}

/// Unit direction `e1` scaled to a norm.
pub fn beta_from_norm(d: usize, norm: f64) -> DVector<f64> {
    let mut v = DVector::zeros(d);
    if d > 0 {
        v[0] = norm;
    }
    v
}
