//! Dense linear algebra helpers and the LP / QP / SDP solvers used by the
//! rest of the crate.
//!
//! Everything here is a pure function of its inputs. Matrices are plain
//! [`nalgebra::DMatrix`] values; [`SymmetricMatrix`] adds a checked symmetry
//! invariant for the eigenvalue routines.

mod lp;
mod qp;
mod sdp;
pub mod serde_matrix;

pub use lp::{solve_lp, LinearProgram, LpOutcome};
pub use qp::{solve_qp, QpOutcome, QuadraticProgram};
pub use sdp::{solve_sdp, solve_sdp_with, BlockLmi, SdpOptions, SdpOutcome, SemidefiniteProgram, VarId, VarShape};

use crate::error::{Error, Result};
use nalgebra::SymmetricEigen;
pub use nalgebra::{DMatrix, DVector};

pub type DenseMatrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// A square matrix whose symmetry has been checked on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    /// Accepts `m` if it is square, finite and symmetric up to
    /// `1e-12 * (1 + max|m|)`. The stored matrix is exactly symmetrized.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidMatrix(format!("expected square matrix, got {}x{}", m.nrows(), m.ncols())));
        }
        check_finite(&m)?;
        let scale = 1.0 + max_abs(&m);
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::InvalidMatrix(format!("asymmetry {asym:.3e}")));
        }
        Ok(Self::symmetrize(m))
    }

    /// Returns `(m + mᵀ)/2` without checking how far `m` was from symmetric.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        let s = (&m + m.transpose()) * 0.5;
        SymmetricMatrix(s)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub(crate) fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidMatrix("non-finite entry".into()))
    }
}

/// Smallest eigenvalue of a symmetric matrix. An empty matrix has no
/// eigenvalues and reports `+inf`.
pub fn min_eigenvalue(s: &SymmetricMatrix) -> Result<f64> {
    check_finite(&s.0)?;
    if s.dim() == 0 {
        return Ok(f64::INFINITY);
    }
    let eig = SymmetricEigen::new(s.0.clone());
    Ok(eig.eigenvalues.min())
}

pub fn is_psd(s: &SymmetricMatrix, tol: f64) -> Result<bool> {
    Ok(min_eigenvalue(s)? >= -tol)
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub(crate) fn min_eig_sym(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues.min()
}

/// Zero-order-hold discretization of `ẋ = Ac x + Bc u` with step `h`.
///
/// Uses the exponential of the augmented matrix `[[Ac, Bc], [0, 0]]·h`,
/// whose top blocks are `exp(Ac h)` and `∫₀ʰ exp(Ac s) ds · Bc`.
pub fn zoh_discretize(ac: &DenseMatrix, bc: &DenseMatrix, h: f64) -> Result<(DenseMatrix, DenseMatrix)> {
    let n = ac.nrows();
    if !ac.is_square() || bc.nrows() != n {
        return Err(Error::InvalidModel(format!(
            "Ac is {}x{}, Bc is {}x{}",
            ac.nrows(),
            ac.ncols(),
            bc.nrows(),
            bc.ncols()
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidModel(format!("sampling period {h} must be > 0")));
    }
    check_finite(ac)?;
    check_finite(bc)?;
    let m = bc.ncols();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(ac * h));
    aug.view_mut((0, n), (n, m)).copy_from(&(bc * h));
    let e = aug.exp();
    Ok((e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned()))
}

/// Inverse of a symmetric positive definite matrix via Cholesky, rejecting
/// condition numbers above `1e12`.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = SymmetricMatrix::symmetrize(m.clone());
    let eig = SymmetricEigen::new(sym.0.clone());
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    if lo <= 0.0 || hi / lo > 1e12 {
        return Err(Error::InvalidModel(format!(
            "{what} is not positive definite or too ill-conditioned (eigenvalues in [{lo:.3e}, {hi:.3e}])"
        )));
    }
    let chol = nalgebra::Cholesky::new(sym.0).ok_or_else(|| Error::InvalidModel(format!("{what}: Cholesky failed")))?;
    let inv = chol.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// General inverse; `None` when the matrix is numerically singular.
pub fn try_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Some(m.clone());
    }
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax == 0.0 || smin / smax < 1e-12 {
        return None;
    }
    m.clone().try_inverse()
}

/// Block-diagonal concatenation.
pub fn block_diag(blocks: &[&DenseMatrix]) -> DenseMatrix {
    let r: usize = blocks.iter().map(|b| b.nrows()).sum();
    let c: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(r, c);
    let (mut i, mut j) = (0, 0);
    for b in blocks {
        out.view_mut((i, j), (b.nrows(), b.ncols())).copy_from(b);
        i += b.nrows();
        j += b.ncols();
    }
    out
}

/// `xᵀ M x`.
pub fn quad_form(m: &DenseMatrix, x: &Vector) -> f64 {
    x.dot(&(m * x))
}
