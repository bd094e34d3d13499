//! Symmetric (semi-)positive-definite matrices with cached spectral data.
//!
//! Every covariance in this crate is wrapped in either [`SpdMatrix`] (strictly
//! positive definite) or [`PsdMatrix`] (semi-definite, possibly rank
//! deficient). Both run a single symmetric eigendecomposition at construction
//! and cache everything derived from it: inverse or Moore-Penrose
//! pseudo-inverse, symmetric square root, (pseudo-)log-determinant, support
//! factor and null basis. Operations never re-factorize.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance for the symmetry check at construction.
pub const SYMMETRY_RTOL: f64 = 1e-12;

/// Definiteness floor: eigenvalues below `DEFINITENESS_RTOL * lambda_max` are
/// treated as zero (rank detection) or rejected (definite construction).
pub const DEFINITENESS_RTOL: f64 = 1e-10;

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let mut max_asym = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            max_asym = max_asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if max_asym > SYMMETRY_RTOL * scale {
        return Err(Error::NotSymmetric {
            max_asym: max_asym / scale,
        });
    }
    Ok(())
}

/// Eigendecomposition of a symmetrized matrix, eigenvalues sorted descending.
fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let d = m.nrows();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(d, d);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Symmetric positive definite matrix with cached spectral data.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    entries: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    log_det: f64,
    inverse: DMatrix<f64>,
    sqrt: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
}

impl SpdMatrix {
    /// Wraps a symmetric positive definite matrix.
    ///
    /// Fails when the matrix is asymmetric beyond `1e-12` relative tolerance
    /// or when any eigenvalue falls below the definiteness floor
    /// `1e-10 * lambda_max`.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch {
                expected: entries.nrows(),
                got: entries.ncols(),
            });
        }
        check_symmetric(&entries)?;
        let (eigenvalues, eigenvectors) = sorted_symmetric_eigen(&entries);
        let lambda_max = eigenvalues[0];
        let floor = DEFINITENESS_RTOL * lambda_max.abs().max(f64::MIN_POSITIVE);
        let lambda_min = *eigenvalues.last().expect("nonempty");
        if !(lambda_min > floor) || !lambda_max.is_finite() {
            return Err(Error::NotPositiveDefinite {
                min_eig: lambda_min,
                floor,
            });
        }
        let d = entries.nrows();
        let mut inverse = DMatrix::zeros(d, d);
        let mut sqrt = DMatrix::zeros(d, d);
        let mut inv_sqrt = DMatrix::zeros(d, d);
        let mut log_det = 0.0;
        for (k, &lam) in eigenvalues.iter().enumerate() {
            let v = eigenvectors.column(k);
            let outer = &v * v.transpose();
            inverse += &outer * (1.0 / lam);
            sqrt += &outer * lam.sqrt();
            inv_sqrt += &outer * (1.0 / lam.sqrt());
            log_det += lam.ln();
        }
        Ok(Self {
            entries,
            eigenvalues,
            eigenvectors,
            log_det,
            inverse,
            sqrt,
            inv_sqrt,
        })
    }

    /// `c * I_d` for `c > 0`.
    pub fn scaled_identity(dim: usize, c: f64) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim) * c)
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors as columns, ordered to match `eigenvalues`.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// Symmetric square root `S^{1/2}`.
    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    /// Symmetric inverse square root `S^{-1/2}`.
    pub fn inv_sqrt(&self) -> &DMatrix<f64> {
        &self.inv_sqrt
    }

    pub fn condition_number(&self) -> f64 {
        self.eigenvalues[0] / self.eigenvalues[self.dim() - 1]
    }

    /// Quadratic form `x^T S^{-1} x`.
    pub fn inv_quad_form(&self, x: &DVector<f64>) -> f64 {
        (&self.inverse * x).dot(x)
    }

    /// View of this matrix as a full-rank [`PsdMatrix`].
    pub fn to_psd(&self) -> PsdMatrix {
        PsdMatrix::new(self.entries.clone()).expect("SPD matrix is PSD")
    }
}

/// Symmetric positive semi-definite matrix with tolerance-based rank
/// detection and cached Moore-Penrose pseudo-inverse.
#[derive(Debug, Clone)]
pub struct PsdMatrix {
    entries: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    rank: usize,
    support_factor: DMatrix<f64>,
    pseudo_inverse: DMatrix<f64>,
    null_basis: DMatrix<f64>,
    pseudo_log_det: f64,
}

impl PsdMatrix {
    /// Wraps a symmetric positive semi-definite matrix of rank >= 1.
    ///
    /// Eigenvalues below `1e-10 * lambda_max` count as zero; negative
    /// eigenvalues beyond that tolerance are rejected.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch {
                expected: entries.nrows(),
                got: entries.ncols(),
            });
        }
        check_symmetric(&entries)?;
        let (eigenvalues, eigenvectors) = sorted_symmetric_eigen(&entries);
        let d = entries.nrows();
        let lambda_max = eigenvalues[0];
        if !(lambda_max > 0.0) {
            return Err(Error::ZeroRank);
        }
        let floor = DEFINITENESS_RTOL * lambda_max;
        let lambda_min = *eigenvalues.last().expect("nonempty");
        if lambda_min < -floor {
            return Err(Error::NotPositiveSemiDefinite {
                min_eig: lambda_min,
            });
        }
        let rank = eigenvalues.iter().filter(|&&l| l > floor).count();
        let mut support_factor = DMatrix::zeros(d, rank);
        let mut pseudo_inverse = DMatrix::zeros(d, d);
        let mut pseudo_log_det = 0.0;
        for k in 0..rank {
            let lam = eigenvalues[k];
            let v = eigenvectors.column(k);
            support_factor.set_column(k, &(v * lam.sqrt()));
            pseudo_inverse += v * v.transpose() * (1.0 / lam);
            pseudo_log_det += lam.ln();
        }
        let mut null_basis = DMatrix::zeros(d, d - rank);
        for k in rank..d {
            null_basis.set_column(k - rank, &eigenvectors.column(k));
        }
        Ok(Self {
            entries,
            eigenvalues,
            eigenvectors,
            rank,
            support_factor,
            pseudo_inverse,
            null_basis,
            pseudo_log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Eigenvalues in descending order (including the zeroed tail).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.dim()
    }

    /// `d x k` factor `L` with `L L^T` equal to the matrix.
    pub fn support_factor(&self) -> &DMatrix<f64> {
        &self.support_factor
    }

    /// Moore-Penrose pseudo-inverse; coincides with the inverse at full rank.
    pub fn pseudo_inverse(&self) -> &DMatrix<f64> {
        &self.pseudo_inverse
    }

    /// Orthonormal basis `a_i` of the null space, as columns (`d x (d-k)`).
    pub fn null_basis(&self) -> &DMatrix<f64> {
        &self.null_basis
    }

    /// Log product of the positive eigenvalues, `log |L^T L|`.
    pub fn pseudo_log_det(&self) -> f64 {
        self.pseudo_log_det
    }

    /// Quadratic form `x^T S^dagger x`.
    pub fn pinv_quad_form(&self, x: &DVector<f64>) -> f64 {
        (&self.pseudo_inverse * x).dot(x)
    }

    /// Strictly definite view; fails when rank deficient.
    pub fn to_spd(&self) -> Result<SpdMatrix> {
        SpdMatrix::new(self.entries.clone())
    }
}

impl From<&SpdMatrix> for PsdMatrix {
    fn from(spd: &SpdMatrix) -> Self {
        spd.to_psd()
    }
}
