//! Evaluation of the marginal `m_pi(z; C) = int N(z; mu, C) pi(mu) dmu` for
//! every prior family, the gradient of its log, and the Brown-identity
//! posterior mean `E[mu | y] = y + Sigma grad log m(y; Sigma)`.
//!
//! Uniform and Gaussian-ridge priors have closed forms. Stein-type priors use
//! a one-dimensional integral representation obtained from the Gamma trick
//! `||mu||^{-(d-2)} = Gamma(s)^{-1} int t^{s-1} exp(-t ||mu||^2) dt` with
//! `s = (d-2)/2`; integrating out `mu` gives
//!
//! ```text
//! m(z; C) = Gamma(s)^{-1} int_0^inf t^{s-1} |I + 2tC'|^{-1/2}
//!           exp(-t z'^T (I + 2tC')^{-1} z') dt
//! ```
//!
//! in whitened coordinates `(z', C')` (identity whitening for plain Stein;
//! `z' = S*^{-1/2} z`, `C' = S*^{-1/2} C S*^{-1/2}` for a rescaled prior).
//! The integral is mapped to `(0, 1)` by `u = 2t/(1+2t)` composed with
//! `u = v^4`, which removes the endpoint singularity of the `t^{s-1}` factor,
//! and evaluated by adaptive Gauss-Kronrod panels. Per-node data that does
//! not depend on `z` is cached for the base panel decomposition.
//!
//! Radial priors have no closed form or 1-d reduction for anisotropic `C`;
//! their evaluator averages the prior over a frozen, seed-derived set of
//! Gaussian draws, which keeps evaluation deterministic and smooth in `z`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::gaussian::{mvn_logpdf, standard_normal_vector};
use crate::matrix::SpdMatrix;
use crate::prior::{log_prior, Prior};
use crate::quad::{panel_error, panel_nodes, panel_sums};

/// Default relative tolerance of the adaptive quadrature.
pub const DEFAULT_QUAD_REL_TOL: f64 = 1e-8;

/// Default replication count and seed of the frozen-draw Monte Carlo method.
pub const DEFAULT_MC_REPLICATIONS: usize = 8192;
pub const DEFAULT_MC_SEED: u64 = 0x5eed_cafe;

/// How `log m` is computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarginalMethod {
    /// Exact formula; available for uniform and Gaussian-ridge priors.
    ClosedForm,
    /// Adaptive 1-d quadrature of the integral representation; Stein priors.
    Quadrature1D { rel_tol: f64 },
    /// Frozen-draw Monte Carlo average of the prior; any prior, used for
    /// radial ones.
    MonteCarlo { n: usize, seed: u64 },
}

/// `ln Gamma(two_s / 2)` by the half-integer recurrence.
fn ln_gamma_half(two_s: usize) -> f64 {
    debug_assert!(two_s >= 1);
    let target = two_s as f64 / 2.0;
    let (mut x, mut acc) = if two_s % 2 == 1 {
        (0.5, 0.5 * std::f64::consts::PI.ln())
    } else {
        (1.0, 0.0)
    };
    while x + 0.5 < target + 1e-9 {
        acc += x.ln();
        x += 1.0;
    }
    acc
}

const N_BASE_PANELS: usize = 8;
const MAX_PANELS: usize = 4000;
const RESTART_MARGIN: f64 = 50.0;

struct CachedNode {
    t: f64,
    /// `(s-1) ln t - (1/2) sum_i ln(1 + 2 t c_i) + ln(dt/dv)`, all the
    /// z-independent log factors of the integrand.
    base: f64,
    /// `1 / (1 + 2 t c_i)` per whitened eigen-direction.
    resolvent: Vec<f64>,
}

struct CachedPanel {
    a: f64,
    b: f64,
    nodes: Vec<CachedNode>,
}

/// Quadrature kernel for the Stein-type integral representation, pinned to
/// the eigenvalues of the whitened covariance.
struct SteinKernel {
    s: f64,
    ln_gamma_s: f64,
    eigs: Vec<f64>,
    rel_tol: f64,
    base_panels: Vec<CachedPanel>,
}

fn node_data(v: f64, s: f64, eigs: &[f64]) -> CachedNode {
    // u = v^4 mapped through t = u / (2 (1 - u)); 1 - u computed in factored
    // form to keep precision near v = 1
    let one_minus_u = (1.0 - v) * (1.0 + v) * (1.0 + v * v);
    let u = v * v * v * v;
    let t = u / (2.0 * one_minus_u);
    // dt/dv = 4 v^3 * 1 / (2 (1-u)^2)
    let dt_dv = 2.0 * v * v * v / (one_minus_u * one_minus_u);
    let mut log_props = 0.0;
    let resolvent: Vec<f64> = eigs
        .iter()
        .map(|&c| {
            let denom = 1.0 + 2.0 * t * c;
            log_props += denom.ln();
            1.0 / denom
        })
        .collect();
    let base = (s - 1.0) * t.ln() - 0.5 * log_props + dt_dv.ln();
    CachedNode { t, base, resolvent }
}

impl SteinKernel {
    fn new(dim: usize, eigs: Vec<f64>, rel_tol: f64) -> Self {
        let s = (dim as f64 - 2.0) / 2.0;
        let ln_gamma_s = ln_gamma_half(dim - 2);
        let width = 1.0 / N_BASE_PANELS as f64;
        let base_panels = (0..N_BASE_PANELS)
            .map(|k| {
                let a = k as f64 * width;
                let b = a + width;
                let nodes = panel_nodes(a, b)
                    .iter()
                    .map(|&v| node_data(v, s, &eigs))
                    .collect();
                CachedPanel { a, b, nodes }
            })
            .collect();
        Self {
            s,
            ln_gamma_s,
            eigs,
            rel_tol,
            base_panels,
        }
    }

    fn log_integrand(&self, node: &CachedNode, zeta_sq: &[f64]) -> f64 {
        let q: f64 = zeta_sq
            .iter()
            .zip(node.resolvent.iter())
            .map(|(&z2, &r)| z2 * r)
            .sum();
        node.base - node.t * q
    }

    /// Adaptive integration of `exp` of the log integrand, with a max-shift
    /// for stability. Returns `ln m(z)` when `with_grad` is false, and
    /// additionally the whitened gradient `d/d zeta_i ln m` otherwise.
    fn integrate(&self, zeta: &DVector<f64>, with_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let d = self.eigs.len();
        let zeta_sq: Vec<f64> = zeta.iter().map(|&x| x * x).collect();
        let ncomp = if with_grad { d + 1 } else { 1 };

        // first shift estimate from the cached base nodes
        let mut shift = f64::NEG_INFINITY;
        for panel in &self.base_panels {
            for node in &panel.nodes {
                shift = shift.max(self.log_integrand(node, &zeta_sq));
            }
        }
        if !shift.is_finite() {
            return Err(Error::NonFiniteMarginal {
                z_norm: zeta.norm(),
            });
        }

        for _attempt in 0..8 {
            match self.integrate_once(&zeta_sq, zeta, shift, ncomp) {
                Ok((totals, errs, max_seen)) => {
                    if max_seen > shift + RESTART_MARGIN {
                        shift = max_seen;
                        continue;
                    }
                    let err_budget = self.rel_tol * totals[0].abs().max(1e-300);
                    if errs[0] > err_budget * 10.0 {
                        return Err(Error::QuadratureNonConvergence {
                            err: errs[0] / totals[0].abs().max(1e-300),
                            panels: MAX_PANELS,
                            tol: self.rel_tol,
                        });
                    }
                    let ln_m = shift + totals[0].ln() - self.ln_gamma_s;
                    if !ln_m.is_finite() {
                        return Err(Error::NonFiniteMarginal {
                            z_norm: zeta.norm(),
                        });
                    }
                    let grad = if with_grad {
                        Some((1..=d).map(|i| totals[i] / totals[0]).collect())
                    } else {
                        None
                    };
                    return Ok((ln_m, grad));
                }
                Err(new_shift) => shift = new_shift,
            }
        }
        Err(Error::NonFiniteMarginal {
            z_norm: zeta.norm(),
        })
    }

    /// One integration pass at a fixed shift. The inner `Err` carries an
    /// improved shift when the integrand exceeds the current one too much.
    #[allow(clippy::type_complexity)]
    fn integrate_once(
        &self,
        zeta_sq: &[f64],
        zeta: &DVector<f64>,
        shift: f64,
        ncomp: usize,
    ) -> std::result::Result<(Vec<f64>, Vec<f64>, f64), f64> {
        struct Piece {
            a: f64,
            b: f64,
            integrals: Vec<f64>,
            errors: Vec<f64>,
            err_key: f64,
        }

        let mut max_seen = f64::NEG_INFINITY;
        let mut values = vec![[0.0f64; 15]; ncomp];

        let eval_panel = |a: f64,
                              b: f64,
                              cached: Option<&CachedPanel>,
                              values: &mut Vec<[f64; 15]>,
                              max_seen: &mut f64|
         -> std::result::Result<Piece, f64> {
            let fresh: Vec<CachedNode>;
            let nodes: &[CachedNode] = match cached {
                Some(p) => &p.nodes,
                None => {
                    fresh = panel_nodes(a, b)
                        .iter()
                        .map(|&v| node_data(v, self.s, &self.eigs))
                        .collect();
                    &fresh
                }
            };
            for (j, node) in nodes.iter().enumerate() {
                let lnf = self.log_integrand(node, zeta_sq);
                if lnf > *max_seen {
                    *max_seen = lnf;
                    if lnf > shift + RESTART_MARGIN {
                        return Err(lnf);
                    }
                }
                let f = (lnf - shift).exp();
                values[0][j] = f;
                for c in 1..ncomp {
                    // d/d zeta_c of the exponent: -2 t zeta_c r_c
                    let g = -2.0 * node.t * zeta[c - 1] * node.resolvent[c - 1];
                    values[c][j] = f * g;
                }
            }
            let mut integrals = Vec::with_capacity(ncomp);
            let mut errors = Vec::with_capacity(ncomp);
            let mut err_key = 0.0f64;
            for c in 0..ncomp {
                let (k, g, resasc) = panel_sums(&values[c], a, b);
                let e = panel_error(k, g, resasc);
                integrals.push(k);
                errors.push(e);
                err_key = err_key.max(e);
            }
            Ok(Piece {
                a,
                b,
                integrals,
                errors,
                err_key,
            })
        };

        let mut pieces: Vec<Piece> = Vec::with_capacity(32);
        for panel in &self.base_panels {
            pieces.push(eval_panel(
                panel.a,
                panel.b,
                Some(panel),
                &mut values,
                &mut max_seen,
            )?);
        }

        loop {
            let mut totals = vec![0.0f64; ncomp];
            let mut errs = vec![0.0f64; ncomp];
            for p in &pieces {
                for c in 0..ncomp {
                    totals[c] += p.integrals[c];
                    errs[c] += p.errors[c];
                }
            }
            let scale0 = totals[0].abs().max(1e-300);
            let converged = (0..ncomp).all(|c| {
                let scale = if c == 0 {
                    scale0
                } else {
                    totals[c].abs().max(scale0)
                };
                errs[c] <= self.rel_tol * scale
            });
            if converged || pieces.len() >= MAX_PANELS {
                return Ok((totals, errs, max_seen));
            }
            // bisect the panel with the largest error
            let worst = pieces
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.err_key.total_cmp(&b.1.err_key))
                .map(|(i, _)| i)
                .expect("nonempty");
            let Piece { a, b, .. } = pieces.swap_remove(worst);
            let mid = 0.5 * (a + b);
            pieces.push(eval_panel(a, mid, None, &mut values, &mut max_seen)?);
            pieces.push(eval_panel(mid, b, None, &mut values, &mut max_seen)?);
        }
    }
}

enum EvalKind {
    Uniform,
    /// Gaussian convolution: `m(z) = N(z; 0, C + lambda^{-1} I)`.
    Ridge { marginal_cov: SpdMatrix },
    SteinLike {
        kernel: SteinKernel,
        /// maps `z` to whitened coordinates `zeta = V^T S*^{-1/2} z`
        to_whitened: DMatrix<f64>,
        /// maps whitened gradients back: `S*^{-1/2} V`
        from_whitened: DMatrix<f64>,
    },
    FrozenMc { shifts: Vec<DVector<f64>> },
}

/// Evaluator of `log m_pi(z; C)` for a fixed (prior, covariance) pair.
///
/// Immutable after construction; all spectral data is computed once.
pub struct MarginalEvaluator {
    prior: Prior,
    cov: SpdMatrix,
    method: MarginalMethod,
    kind: EvalKind,
}

impl MarginalEvaluator {
    /// Picks the canonical method for the prior: closed form where exact
    /// (uniform, ridge), quadrature for Stein-type, frozen Monte Carlo for
    /// radial priors.
    pub fn auto(prior: Prior, cov: SpdMatrix) -> Result<Self> {
        let method = match &prior {
            Prior::Uniform { .. } | Prior::GaussianRidge { .. } => MarginalMethod::ClosedForm,
            Prior::Stein { .. } | Prior::RescaledStein { .. } => MarginalMethod::Quadrature1D {
                rel_tol: DEFAULT_QUAD_REL_TOL,
            },
            Prior::Radial { .. } => MarginalMethod::MonteCarlo {
                n: DEFAULT_MC_REPLICATIONS,
                seed: DEFAULT_MC_SEED,
            },
        };
        Self::new(prior, cov, method)
    }

    /// Quadrature evaluator with a custom tolerance (Stein priors fall back
    /// to it; closed-form priors ignore it).
    pub fn with_rel_tol(prior: Prior, cov: SpdMatrix, rel_tol: f64) -> Result<Self> {
        match &prior {
            Prior::Stein { .. } | Prior::RescaledStein { .. } => {
                Self::new(prior, cov, MarginalMethod::Quadrature1D { rel_tol })
            }
            _ => Self::auto(prior, cov),
        }
    }

    pub fn new(prior: Prior, cov: SpdMatrix, method: MarginalMethod) -> Result<Self> {
        let d = cov.dim();
        if prior.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: prior.dim(),
            });
        }
        let kind = match (&prior, method) {
            (Prior::Uniform { .. }, MarginalMethod::ClosedForm) => EvalKind::Uniform,
            (Prior::GaussianRidge { lambda, .. }, MarginalMethod::ClosedForm) => {
                let marginal_cov =
                    SpdMatrix::new(cov.entries() + DMatrix::identity(d, d) / *lambda)?;
                EvalKind::Ridge { marginal_cov }
            }
            (Prior::Stein { dim }, MarginalMethod::Quadrature1D { rel_tol }) => {
                if *dim < 3 {
                    return Err(Error::SteinDimension { dim: *dim });
                }
                let kernel = SteinKernel::new(d, cov.eigenvalues().to_vec(), rel_tol);
                EvalKind::SteinLike {
                    kernel,
                    to_whitened: cov.eigenvectors().transpose(),
                    from_whitened: cov.eigenvectors().clone(),
                }
            }
            (Prior::RescaledStein { sigma_star }, MarginalMethod::Quadrature1D { rel_tol }) => {
                let whitened = sigma_star.inv_sqrt() * cov.entries() * sigma_star.inv_sqrt();
                let cw = SpdMatrix::new(whitened)?;
                let kernel = SteinKernel::new(d, cw.eigenvalues().to_vec(), rel_tol);
                EvalKind::SteinLike {
                    kernel,
                    to_whitened: cw.eigenvectors().transpose() * sigma_star.inv_sqrt(),
                    from_whitened: sigma_star.inv_sqrt() * cw.eigenvectors(),
                }
            }
            (_, MarginalMethod::MonteCarlo { n, seed }) => {
                if n < 1000 {
                    return Err(Error::TooFewReplications { n, min: 1000 });
                }
                let mut rng = ChaCha12Rng::seed_from_u64(seed);
                let shifts = (0..n)
                    .map(|_| cov.sqrt() * standard_normal_vector(d, &mut rng))
                    .collect();
                EvalKind::FrozenMc { shifts }
            }
            (_, m) => {
                return Err(Error::InvalidParameter {
                    name: "method",
                    reason: format!("{m:?} is not available for {prior:?}"),
                })
            }
        };
        Ok(Self {
            prior,
            cov,
            method,
            kind,
        })
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn cov(&self) -> &SpdMatrix {
        &self.cov
    }

    pub fn method(&self) -> MarginalMethod {
        self.method
    }

    /// `log m_pi(z; C)`, up to the prior's fixed additive constant.
    pub fn log_marginal(&self, z: &DVector<f64>) -> Result<f64> {
        let value = match &self.kind {
            EvalKind::Uniform => 0.0,
            EvalKind::Ridge { marginal_cov } => {
                mvn_logpdf(z, &DVector::zeros(self.cov.dim()), marginal_cov)
            }
            EvalKind::SteinLike {
                kernel,
                to_whitened,
                ..
            } => {
                let zeta = to_whitened * z;
                kernel.integrate(&zeta, false)?.0
            }
            EvalKind::FrozenMc { shifts } => self.frozen_mc_log(z, shifts)?,
        };
        if !value.is_finite() {
            return Err(Error::NonFiniteMarginal { z_norm: z.norm() });
        }
        Ok(value)
    }

    fn frozen_mc_log(&self, z: &DVector<f64>, shifts: &[DVector<f64>]) -> Result<f64> {
        let mut logs = Vec::with_capacity(shifts.len());
        let mut max = f64::NEG_INFINITY;
        for shift in shifts {
            let lp = log_prior(&self.prior, &(z + shift))?;
            max = max.max(lp);
            logs.push(lp);
        }
        let sum: f64 = logs.iter().map(|&l| (l - max).exp()).sum();
        Ok(max + (sum / shifts.len() as f64).ln())
    }

    /// `grad_z log m_pi(z; C)`.
    ///
    /// Quadrature evaluators differentiate under the integral sign on the
    /// same nodes; the frozen Monte Carlo evaluator falls back to central
    /// finite differences of its own (smooth, deterministic) estimate.
    pub fn grad_log_marginal(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let d = self.cov.dim();
        match &self.kind {
            EvalKind::Uniform => Ok(DVector::zeros(d)),
            EvalKind::Ridge { marginal_cov } => Ok(-(marginal_cov.inverse() * z)),
            EvalKind::SteinLike {
                kernel,
                to_whitened,
                from_whitened,
            } => {
                let zeta = to_whitened * z;
                let (_, grad) = kernel.integrate(&zeta, true)?;
                let g = DVector::from_vec(grad.expect("gradient requested"));
                Ok(from_whitened * g)
            }
            EvalKind::FrozenMc { .. } => {
                let h = 1e-5 * (1.0 + z.norm());
                let mut grad = DVector::zeros(d);
                for i in 0..d {
                    let mut plus = z.clone();
                    plus[i] += h;
                    let mut minus = z.clone();
                    minus[i] -= h;
                    grad[i] =
                        (self.log_marginal(&plus)? - self.log_marginal(&minus)?) / (2.0 * h);
                }
                Ok(grad)
            }
        }
    }
}

/// Brute-force Monte Carlo estimate of `m_pi(z; C)` on the linear scale:
/// draws `mu ~ N(z, C)` and averages `pi(mu)`.
#[derive(Debug, Clone, Copy)]
pub struct MarginalMcEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Draws rejected (and redrawn) for landing within `1e-12` of the Stein
    /// pole.
    pub rejected: usize,
}

/// Monte Carlo oracle for the marginal; the anti-hallucination check for the
/// quadrature representation.
pub fn log_marginal_mc_oracle<R: Rng + ?Sized>(
    prior: &Prior,
    cov: &SpdMatrix,
    z: &DVector<f64>,
    n: usize,
    rng: &mut R,
) -> Result<MarginalMcEstimate> {
    if n < 1000 {
        return Err(Error::TooFewReplications { n, min: 1000 });
    }
    let d = cov.dim();
    if prior.dim() != d || z.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: prior.dim().min(z.len()),
        });
    }
    let is_stein = matches!(prior, Prior::Stein { .. } | Prior::RescaledStein { .. });
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut rejected = 0usize;
    for _ in 0..n {
        let value = loop {
            let mu = z + cov.sqrt() * standard_normal_vector(d, rng);
            if is_stein {
                let dist = match prior {
                    Prior::RescaledStein { sigma_star } => (sigma_star.inv_sqrt() * &mu).norm(),
                    _ => mu.norm(),
                };
                if dist < 1e-12 {
                    rejected += 1;
                    continue;
                }
            }
            break log_prior(prior, &mu)?.exp();
        };
        sum += value;
        sum_sq += value * value;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    Ok(MarginalMcEstimate {
        mean,
        std_error: (var / n as f64).sqrt(),
        rejected,
    })
}

/// Posterior mean `E[mu | y]` through the Gaussian-shift identity
/// `E[mu | y] = y + Sigma grad log m_pi(y; Sigma)`.
pub fn posterior_mean(prior: &Prior, y: &DVector<f64>, sigma: &SpdMatrix) -> Result<DVector<f64>> {
    let ev = MarginalEvaluator::auto(prior.clone(), sigma.clone())?;
    posterior_mean_with(&ev, y)
}

/// Posterior mean reusing an existing evaluator for `(prior, Sigma)`.
pub fn posterior_mean_with(ev: &MarginalEvaluator, y: &DVector<f64>) -> Result<DVector<f64>> {
    let grad = ev.grad_log_marginal(y)?;
    Ok(y + ev.cov().entries() * grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use std::sync::Arc;

    fn e1(d: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        v[0] = 1.0;
        v
    }

    #[test]
    fn ln_gamma_half_integer_values() {
        // Gamma(1/2) = sqrt(pi), Gamma(1) = 1, Gamma(3/2) = sqrt(pi)/2,
        // Gamma(7/2) = 15 sqrt(pi) / 8
        let pi = std::f64::consts::PI;
        assert_abs_diff_eq!(ln_gamma_half(1), 0.5 * pi.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(ln_gamma_half(2), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ln_gamma_half(3), (pi.sqrt() / 2.0).ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(
            ln_gamma_half(7),
            (15.0 * pi.sqrt() / 8.0).ln(),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(ln_gamma_half(8), 6.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn stein_marginal_at_origin_isotropic() {
        let prior = Prior::stein(3).unwrap();
        let ev = MarginalEvaluator::auto(prior, SpdMatrix::identity(3)).unwrap();
        let lm = ev.log_marginal(&DVector::zeros(3)).unwrap();
        // m(0; I_3) = E ||mu||^{-1} = sqrt(2/pi)
        assert_abs_diff_eq!(lm.exp(), 0.7978845608028654, epsilon = 1e-7);
    }

    #[test]
    fn stein_marginal_matches_erf_closed_form_d3() {
        // m(z; I_3) = erf(||z||/sqrt(2)) / ||z||, frozen from mpmath
        let cases = [
            (0.5, 0.7658498450960524),
            (1.0, 0.6826894921370859),
            (2.0, 0.4772498680518208),
            (10.0, 0.09999999999999999),
        ];
        let prior = Prior::stein(3).unwrap();
        let ev = MarginalEvaluator::auto(prior, SpdMatrix::identity(3)).unwrap();
        for (r, expect) in cases {
            let lm = ev.log_marginal(&(e1(3) * r)).unwrap();
            assert_abs_diff_eq!(lm.exp(), expect, epsilon = 1e-7);
        }
    }

    #[test]
    fn stein_marginal_anisotropic_reference() {
        // d = 5, C = diag(1..5), z = 2 e1; reference from 30-digit quadrature
        let cov = SpdMatrix::new(DMatrix::from_diagonal(&DVector::from_row_slice(&[
            1.0, 2.0, 3.0, 4.0, 5.0,
        ])))
        .unwrap();
        let ev = MarginalEvaluator::auto(Prior::stein(5).unwrap(), cov).unwrap();
        let lm = ev.log_marginal(&(e1(5) * 2.0)).unwrap();
        assert_abs_diff_eq!(lm, -3.5647117352716428, epsilon = 1e-7);
    }

    #[test]
    fn stein_marginal_far_field_asymptote() {
        // m(z) -> ||z||^{2-d} with exponentially small corrections
        let prior = Prior::stein(5).unwrap();
        let ev = MarginalEvaluator::auto(prior, SpdMatrix::identity(5)).unwrap();
        let lm = ev.log_marginal(&(e1(5) * 50.0)).unwrap();
        assert!((lm - (-3.0 * 50.0f64.ln())).abs() < 1e-3, "lm = {lm}");
    }

    #[test]
    fn ridge_marginal_is_gaussian_convolution() {
        let mut rng = StdRng::seed_from_u64(1);
        let cov = crate::matrix::testutil::random_spd(4, &mut rng);
        let lambda = 10.0;
        let prior = Prior::gaussian_ridge(4, lambda).unwrap();
        let ev = MarginalEvaluator::auto(prior, cov.clone()).unwrap();
        let total = SpdMatrix::new(cov.entries() + DMatrix::identity(4, 4) * 0.1).unwrap();
        for _ in 0..5 {
            let z = standard_normal_vector(4, &mut rng) * 2.0;
            let lm = ev.log_marginal(&z).unwrap();
            let expect = mvn_logpdf(&z, &DVector::zeros(4), &total);
            assert_abs_diff_eq!(lm, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn mc_oracle_stein_origin() {
        let mut rng = StdRng::seed_from_u64(2);
        let prior = Prior::stein(3).unwrap();
        let est = log_marginal_mc_oracle(
            &prior,
            &SpdMatrix::identity(3),
            &DVector::zeros(3),
            1_000_000,
            &mut rng,
        )
        .unwrap();
        assert!(
            (est.mean - 0.7978845608028654).abs() < 3.0 * est.std_error.max(1e-3),
            "mean {} se {}",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn mc_oracle_uniform_exact_one() {
        let mut rng = StdRng::seed_from_u64(3);
        let est = log_marginal_mc_oracle(
            &Prior::uniform(3),
            &SpdMatrix::identity(3),
            &e1(3),
            1000,
            &mut rng,
        )
        .unwrap();
        assert_eq!(est.mean, 1.0);
        assert_eq!(est.std_error, 0.0);
        assert_eq!(est.rejected, 0);
    }

    #[test]
    fn quadrature_agrees_with_mc_oracle() {
        let mut rng = StdRng::seed_from_u64(4);
        for trial in 0..6 {
            let d = [3, 4, 5][trial % 3];
            let cov = crate::matrix::testutil::random_spd(d, &mut rng);
            let prior = if trial % 2 == 0 {
                Prior::stein(d).unwrap()
            } else {
                Prior::rescaled_stein(crate::matrix::testutil::random_spd(d, &mut rng)).unwrap()
            };
            let z = standard_normal_vector(d, &mut rng) * 1.5;
            let ev = MarginalEvaluator::auto(prior.clone(), cov.clone()).unwrap();
            let quad = ev.log_marginal(&z).unwrap().exp();
            let mc = log_marginal_mc_oracle(&prior, &cov, &z, 400_000, &mut rng).unwrap();
            assert!(
                (quad - mc.mean).abs() < 4.0 * mc.std_error,
                "trial {trial}: quad {quad} mc {} +- {}",
                mc.mean,
                mc.std_error
            );
        }
    }

    #[test]
    fn rescaled_route_matches_whitened_stein_route() {
        // z-dependence of log m for RescaledStein(S*) at (z, C) equals that of
        // plain Stein at (S*^{-1/2} z, S*^{-1/2} C S*^{-1/2})
        let mut rng = StdRng::seed_from_u64(5);
        let sigma_star = crate::matrix::testutil::random_spd(4, &mut rng);
        let cov = crate::matrix::testutil::random_spd(4, &mut rng);
        let resc =
            MarginalEvaluator::auto(Prior::rescaled_stein(sigma_star.clone()).unwrap(), cov.clone())
                .unwrap();
        let cw = SpdMatrix::new(sigma_star.inv_sqrt() * cov.entries() * sigma_star.inv_sqrt())
            .unwrap();
        let stein = MarginalEvaluator::auto(Prior::stein(4).unwrap(), cw).unwrap();
        let z1 = standard_normal_vector(4, &mut rng);
        let z2 = standard_normal_vector(4, &mut rng) * 2.0;
        let lhs = resc.log_marginal(&z1).unwrap() - resc.log_marginal(&z2).unwrap();
        let rhs = stein.log_marginal(&(sigma_star.inv_sqrt() * &z1)).unwrap()
            - stein.log_marginal(&(sigma_star.inv_sqrt() * &z2)).unwrap();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-8);
    }

    #[test]
    fn rotation_equivariance() {
        // m(P z; P C P^T) = m(z; C) for rotation-invariant priors
        let mut rng = StdRng::seed_from_u64(6);
        let cov = crate::matrix::testutil::random_spd(3, &mut rng);
        let z = standard_normal_vector(3, &mut rng);
        // random orthogonal matrix via QR of a Gaussian matrix
        let g = crate::matrix::testutil::random_gaussian_matrix(3, 3, &mut rng);
        let p = g.qr().q();
        let rotated_cov = SpdMatrix::new(&p * cov.entries() * p.transpose()).unwrap();
        let ev = MarginalEvaluator::auto(Prior::stein(3).unwrap(), cov).unwrap();
        let ev_rot = MarginalEvaluator::auto(Prior::stein(3).unwrap(), rotated_cov).unwrap();
        let lhs = ev.log_marginal(&z).unwrap();
        let rhs = ev_rot.log_marginal(&(&p * &z)).unwrap();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-8);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(7);
        let cov = crate::matrix::testutil::random_spd(5, &mut rng);
        let ev = MarginalEvaluator::auto(Prior::stein(5).unwrap(), cov).unwrap();
        for _ in 0..10 {
            let z = standard_normal_vector(5, &mut rng) * 1.5;
            let grad = ev.grad_log_marginal(&z).unwrap();
            let h = 1e-4;
            for i in 0..5 {
                let mut plus = z.clone();
                plus[i] += h;
                let mut minus = z.clone();
                minus[i] -= h;
                let fd = (ev.log_marginal(&plus).unwrap() - ev.log_marginal(&minus).unwrap())
                    / (2.0 * h);
                assert!(
                    (grad[i] - fd).abs() < 1e-5,
                    "component {i}: analytic {} fd {fd}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn posterior_mean_uniform_is_identity() {
        let mut rng = StdRng::seed_from_u64(8);
        let sigma = crate::matrix::testutil::random_spd(3, &mut rng);
        let y = standard_normal_vector(3, &mut rng);
        let pm = posterior_mean(&Prior::uniform(3), &y, &sigma).unwrap();
        assert!((pm - y).amax() < 1e-14);
    }

    #[test]
    fn posterior_mean_ridge_conjugate_formula() {
        let mut rng = StdRng::seed_from_u64(9);
        let sigma = crate::matrix::testutil::random_spd(4, &mut rng);
        let lambda = 3.0;
        let y = standard_normal_vector(4, &mut rng) * 2.0;
        let pm = posterior_mean(&Prior::gaussian_ridge(4, lambda).unwrap(), &y, &sigma).unwrap();
        // (Sigma^{-1} + lambda I)^{-1} Sigma^{-1} y
        let precision = sigma.inverse() + DMatrix::identity(4, 4) * lambda;
        let expect = precision
            .lu()
            .solve(&(sigma.inverse() * &y))
            .expect("solvable");
        assert!((pm - expect).amax() < 1e-10);
    }

    #[test]
    fn posterior_mean_stein_far_field_shrinkage() {
        // James-Stein behavior: factor in (1 - (d-2)/||y||^2 - 0.01, 1)
        let y = e1(5) * 10.0;
        let pm = posterior_mean(&Prior::stein(5).unwrap(), &y, &SpdMatrix::identity(5)).unwrap();
        let factor = pm.norm() / y.norm();
        assert!(factor < 1.0, "factor {factor}");
        assert!(factor > 1.0 - 3.0 / 100.0 - 0.01, "factor {factor}");
    }

    #[test]
    fn radial_prior_frozen_mc_is_deterministic_and_finite() {
        let g: crate::prior::RadialFn = Arc::new(|r: f64| (-0.5 * r * r).exp());
        let prior = Prior::radial(3, g, true);
        let ev = MarginalEvaluator::auto(prior.clone(), SpdMatrix::identity(3)).unwrap();
        let z = e1(3) * 2.0;
        let a = ev.log_marginal(&z).unwrap();
        let ev2 = MarginalEvaluator::auto(prior, SpdMatrix::identity(3)).unwrap();
        let b = ev2.log_marginal(&z).unwrap();
        assert_eq!(a, b);
        assert!(a.is_finite());
    }

    #[test]
    fn finiteness_guard_across_dims_and_priors() {
        for d in 3..=9usize {
            let cov = SpdMatrix::identity(d);
            let priors = vec![
                Prior::uniform(d),
                Prior::stein(d).unwrap(),
                Prior::rescaled_stein(SpdMatrix::scaled_identity(d, 2.0).unwrap()).unwrap(),
                Prior::gaussian_ridge(d, 10.0).unwrap(),
            ];
            for prior in priors {
                let ev = MarginalEvaluator::auto(prior, cov.clone()).unwrap();
                for norm in [0.0, 1.0, 1e3] {
                    let z = e1(d) * norm;
                    let lm = ev.log_marginal(&z).unwrap();
                    assert!(lm.is_finite(), "d={d}, |z|={norm}: {lm}");
                }
            }
        }
    }

    #[test]
    fn quadrature_rejects_closed_form_mismatch() {
        let err = MarginalEvaluator::new(
            Prior::stein(3).unwrap(),
            SpdMatrix::identity(3),
            MarginalMethod::ClosedForm,
        );
        assert!(err.is_err());
    }
}
