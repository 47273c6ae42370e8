//! Polytopes in the normalized H-representation `{x : c_i·x ≤ 1}` and the
//! periodic family of terminal sets built from an invariant polytope.
//!
//! Every set here contains the origin, so the right-hand side is always one.

use crate::error::{Error, Result};
use crate::numerics::{solve_lp, try_inverse, DenseMatrix, LinearProgram, LpOutcome, Vector};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

const INCLUSION_TOL: f64 = 1e-8;
const REDUNDANCY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolytopeRepr", into = "PolytopeRepr")]
pub struct Polytope {
    dim: usize,
    rows: DenseMatrix,
}

#[derive(Serialize, Deserialize)]
struct PolytopeRepr {
    dim: usize,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<PolytopeRepr> for Polytope {
    type Error = Error;
    fn try_from(r: PolytopeRepr) -> Result<Self> {
        Polytope::from_rows(r.dim, &r.rows)
    }
}

impl From<Polytope> for PolytopeRepr {
    fn from(p: Polytope) -> Self {
        PolytopeRepr {
            dim: p.dim,
            rows: (0..p.rows.nrows()).map(|i| p.rows.row(i).iter().copied().collect()).collect(),
        }
    }
}

impl Polytope {
    pub fn new(rows: DenseMatrix) -> Result<Self> {
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("polytope rows must be finite".into()));
        }
        Ok(Polytope { dim: rows.ncols(), rows })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidMatrix(format!("polytope rows must have length {dim}")));
        }
        let flat: Vec<f64> = rows.concat();
        Polytope::new(DMatrix::from_row_slice(rows.len(), dim, &flat))
    }

    /// `{x : |x_i| ≤ bound_i}`.
    pub fn symmetric_box(bounds: &[f64]) -> Result<Self> {
        let lo: Vec<f64> = bounds.iter().map(|b| -b).collect();
        Polytope::box_bounds(&lo, bounds)
    }

    /// `{x : lo_i ≤ x_i ≤ hi_i}` with `lo_i < 0 < hi_i`.
    pub fn box_bounds(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::InvalidMatrix("box bounds differ in length".into()));
        }
        let n = lo.len();
        let mut rows = DMatrix::zeros(2 * n, n);
        for i in 0..n {
            if !(hi[i] > 0.0 && lo[i] < 0.0 && hi[i].is_finite() && lo[i].is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "box [{}, {}] must contain the origin in its interior",
                    lo[i], hi[i]
                )));
            }
            rows[(2 * i, i)] = 1.0 / hi[i];
            rows[(2 * i + 1, i)] = 1.0 / lo[i];
        }
        Polytope::new(rows)
    }

    /// Cartesian product `P × Q`.
    pub fn product(p: &Polytope, q: &Polytope) -> Polytope {
        let (mp, mq) = (p.num_rows(), q.num_rows());
        let mut rows = DMatrix::zeros(mp + mq, p.dim + q.dim);
        rows.view_mut((0, 0), (mp, p.dim)).copy_from(&p.rows);
        rows.view_mut((mp, p.dim), (mq, q.dim)).copy_from(&q.rows);
        Polytope { dim: p.dim + q.dim, rows }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn rows(&self) -> &DenseMatrix {
        &self.rows
    }

    /// `α·P`.
    pub fn scaled(&self, alpha: f64) -> Result<Polytope> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidModel(format!("scaling factor must be positive, got {alpha}")));
        }
        Polytope::new(&self.rows / alpha)
    }

    /// Largest violation `max_i c_i·x − 1` (negative inside).
    pub fn violation(&self, x: &Vector) -> Result<f64> {
        self.check_dim(x.len())?;
        if self.num_rows() == 0 {
            return Ok(f64::NEG_INFINITY);
        }
        Ok((&self.rows * x).max() - 1.0)
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> Result<bool> {
        Ok(self.violation(x)? <= tol)
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim {
            return Err(Error::InvalidMatrix(format!("dimension mismatch: polytope in R^{}, got {n}", self.dim)));
        }
        Ok(())
    }

    /// `max_{x∈P} d·x`.
    pub fn support(&self, d: &Vector) -> Result<f64> {
        self.check_dim(d.len())?;
        let lp = LinearProgram::maximize(d.clone(), self.rows.clone(), DVector::from_element(self.num_rows(), 1.0));
        match solve_lp(&lp)? {
            LpOutcome::Optimal { value, .. } => Ok(value),
            LpOutcome::Unbounded => Err(Error::Unbounded),
            LpOutcome::Infeasible => Err(Error::Solver("polytope is empty".into())),
        }
    }

    /// Exact image `L·P` for invertible `L`.
    pub fn linear_image(&self, l: &DenseMatrix) -> Result<Polytope> {
        if l.nrows() != self.dim || l.ncols() != self.dim {
            return Err(Error::InvalidMatrix("image map must be square".into()));
        }
        match try_inverse(l) {
            Some(inv) => Polytope::new(&self.rows * inv),
            None => Err(Error::InvalidMatrix("singular map: use LinearImage for an exact representation".into())),
        }
    }

    /// Drops rows implied by the others.
    pub fn remove_redundant(&self) -> Result<Polytope> {
        // unit-normalized rows for duplicate detection
        let mut keep: Vec<usize> = Vec::new();
        for i in 0..self.num_rows() {
            let ri = self.rows.row(i);
            if ri.amax() == 0.0 {
                continue;
            }
            let dup = keep.iter().any(|&j| (self.rows.row(j) - ri).amax() <= 1e-12 * (1.0 + ri.amax()));
            if !dup {
                keep.push(i);
            }
        }
        let mut k = 0;
        while k < keep.len() {
            let i = keep[k];
            let others: Vec<usize> = keep.iter().copied().filter(|&j| j != i).collect();
            let a = DMatrix::from_fn(others.len(), self.dim, |r, c| self.rows[(others[r], c)]);
            let lp = LinearProgram::maximize(self.rows.row(i).transpose(), a, DVector::from_element(others.len(), 1.0));
            let redundant = match solve_lp(&lp)? {
                LpOutcome::Optimal { value, .. } => value <= 1.0 + REDUNDANCY_TOL,
                LpOutcome::Unbounded => false,
                LpOutcome::Infeasible => return Err(Error::Solver("polytope is empty".into())),
            };
            if redundant {
                keep.remove(k);
            } else {
                k += 1;
            }
        }
        let rows = DMatrix::from_fn(keep.len(), self.dim, |r, c| self.rows[(keep[r], c)]);
        Polytope::new(rows)
    }
}

/// Whether `A·P ⊆ Q`.
pub fn image_contained(a: &DenseMatrix, p: &Polytope, q: &Polytope) -> Result<bool> {
    Ok(image_excess(a, p, q)? <= INCLUSION_TOL)
}

/// `max_i max_{x∈P} q_i·A·x − 1`; non-positive iff `A·P ⊆ Q`.
pub fn image_excess(a: &DenseMatrix, p: &Polytope, q: &Polytope) -> Result<f64> {
    if a.ncols() != p.dim || a.nrows() != q.dim {
        return Err(Error::InvalidMatrix("image map does not match polytope dimensions".into()));
    }
    let pulled = &q.rows * a;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..q.num_rows() {
        let h = p.support(&pulled.row(i).transpose())?;
        worst = worst.max(h - 1.0);
    }
    Ok(worst)
}

/// Largest `Z ⊆ X0` with `Acl·Z ⊆ Z`, by preimage iteration.
pub fn max_invariant_polytope(acl: &DenseMatrix, x0: &Polytope, max_iter: usize) -> Result<Polytope> {
    let n = x0.dim;
    if acl.nrows() != n || acl.ncols() != n {
        return Err(Error::InvalidMatrix("closed-loop map must match the polytope dimension".into()));
    }
    let rho = acl.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0_f64, f64::max);
    if rho >= 1.0 {
        log::warn!("closed-loop spectral radius {rho:.4} ≥ 1; invariant set may be degenerate");
    }
    let mut z = x0.remove_redundant()?;
    for it in 0..max_iter {
        if image_contained(acl, &z, &z)? {
            log::debug!("invariant set converged after {it} iterations with {} rows", z.num_rows());
            return Ok(z);
        }
        let pre = &z.rows * acl;
        let mut rows = DMatrix::zeros(z.num_rows() + pre.nrows(), n);
        rows.view_mut((0, 0), (z.num_rows(), n)).copy_from(&z.rows);
        rows.view_mut((z.num_rows(), 0), (pre.nrows(), n)).copy_from(&pre);
        z = Polytope::new(rows)?.remove_redundant()?;
    }
    Err(Error::NotConverged(max_iter))
}

/// `α* = min_{L, i} 1 / max_{x∈Z} b_i·L·x`, clipped to `[0, 1]`.
pub fn max_scaling(maps: &[DenseMatrix], z: &Polytope, bound: &Polytope) -> Result<f64> {
    let mut alpha: f64 = 1.0;
    for l in maps {
        if l.ncols() != z.dim || l.nrows() != bound.dim {
            return Err(Error::InvalidMatrix("scaling map does not match polytope dimensions".into()));
        }
        let pulled = &bound.rows * l;
        for i in 0..bound.num_rows() {
            let h = z.support(&pulled.row(i).transpose())?;
            if h > 0.0 {
                alpha = alpha.min(1.0 / h);
            }
        }
    }
    Ok(alpha.clamp(0.0, 1.0))
}

/// The set `{L·w : w ∈ P}` for a possibly singular square `L`.
///
/// With the SVD `L = UΣVᵀ` of numerical rank `r`, `y` lies in the image iff
/// `U₂ᵀy = 0` and `C(L⁺y + V₂v) ≤ 1` for some `v`; [`ImageRows`] holds these
/// three blocks. For invertible `L` the last block is empty and the second is
/// the exact H-representation `C·L⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRows {
    /// `U₂ᵀ`: rows annihilating the range.
    pub eq: DenseMatrix,
    /// `C·L⁺`.
    pub ineq_y: DenseMatrix,
    /// `C·V₂`: coefficients of the null-space coordinates.
    pub ineq_v: DenseMatrix,
}

const RANK_TOL: f64 = 1e-9;

impl ImageRows {
    pub fn new(base: &Polytope, l: &DenseMatrix) -> Result<Self> {
        let n = base.dim;
        if l.shape() != (n, n) {
            return Err(Error::InvalidMatrix("image map must be square".into()));
        }
        let svd = l.clone().svd(true, true);
        let (u, vt) = match (svd.u, svd.v_t) {
            (Some(u), Some(vt)) => (u, vt),
            _ => return Err(Error::Solver("SVD failed".into())),
        };
        let smax = svd.singular_values.max();
        let keep: Vec<usize> = (0..n).filter(|&i| smax > 0.0 && svd.singular_values[i] > RANK_TOL * smax).collect();
        let drop: Vec<usize> = (0..n).filter(|i| !keep.contains(i)).collect();
        let mut pinv = DMatrix::zeros(n, n);
        for &i in &keep {
            pinv += vt.row(i).transpose() * u.column(i).transpose() / svd.singular_values[i];
        }
        let eq = DMatrix::from_fn(drop.len(), n, |r, c| u[(c, drop[r])]);
        let v2 = DMatrix::from_fn(n, drop.len(), |r, c| vt[(drop[c], r)]);
        Ok(ImageRows { eq, ineq_y: &base.rows * pinv, ineq_v: &base.rows * v2 })
    }

    pub fn is_full_rank(&self) -> bool {
        self.eq.nrows() == 0
    }

    /// `min_v max_i (C(L⁺y + V₂v))_i − 1` and the range residual `‖U₂ᵀy‖_∞`.
    pub fn violation(&self, y: &Vector) -> Result<(f64, f64)> {
        if y.len() != self.ineq_y.ncols() {
            return Err(Error::InvalidMatrix("point dimension does not match the image".into()));
        }
        let residual = if self.eq.nrows() == 0 { 0.0 } else { (&self.eq * y).amax() };
        let s0 = &self.ineq_y * y;
        if self.ineq_v.ncols() == 0 {
            return Ok((s0.max() - 1.0, residual));
        }
        // maximize −s subject to C·V₂·v − s ≤ 1 − s0
        let nv = self.ineq_v.ncols();
        let rows = self.ineq_v.nrows();
        let mut a = DMatrix::zeros(rows, nv + 1);
        a.view_mut((0, 0), (rows, nv)).copy_from(&self.ineq_v);
        a.column_mut(nv).fill(-1.0);
        let mut c = DVector::zeros(nv + 1);
        c[nv] = -1.0;
        let b = s0.map(|v| 1.0 - v);
        match solve_lp(&LinearProgram::maximize(c, a, b))? {
            LpOutcome::Optimal { value, .. } => Ok((-value, residual)),
            LpOutcome::Unbounded => Err(Error::Unbounded),
            LpOutcome::Infeasible => Err(Error::Solver("image membership LP infeasible".into())),
        }
    }
}

/// `Z_0, …, Z_{M−1}` with `A″Z_0 ⊆ Z_1`, `A′Z_j ⊆ Z_{j+1}` and `A′Z_{M−1} ⊆ Z_0`.
///
/// Each set is kept as the image `Z_j = L_j·Z` of one base polytope, which
/// stays exact when the maps are singular.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicPolytopeFamily {
    pub base: Polytope,
    #[serde(with = "crate::numerics::serde_matrix::list")]
    pub maps: Vec<DenseMatrix>,
}

impl PeriodicPolytopeFamily {
    /// Family of plain polytopes (identity maps).
    pub fn from_polytope(base: Polytope, period: usize) -> Self {
        let n = base.dim;
        PeriodicPolytopeFamily { base, maps: vec![DMatrix::identity(n, n); period] }
    }

    pub fn period(&self) -> usize {
        self.maps.len()
    }

    pub fn dim(&self) -> usize {
        self.base.dim
    }

    pub fn map(&self, j: usize) -> &DenseMatrix {
        &self.maps[j % self.maps.len()]
    }

    pub fn image_rows(&self, j: usize) -> Result<ImageRows> {
        ImageRows::new(&self.base, self.map(j))
    }

    /// H-representation of `Z_j` when its map is invertible.
    pub fn h_rep(&self, j: usize) -> Result<Option<Polytope>> {
        let rows = self.image_rows(j)?;
        if rows.is_full_rank() {
            Ok(Some(Polytope::new(rows.ineq_y)?))
        } else {
            Ok(None)
        }
    }

    /// `z ∈ Z_j` within `tol` (relative to `1 + ‖z‖_∞` for the range test).
    pub fn contains(&self, j: usize, z: &Vector, tol: f64) -> Result<bool> {
        let (viol, residual) = self.image_rows(j)?.violation(z)?;
        Ok(viol <= tol && residual <= tol.max(1e-10) * (1.0 + z.amax()))
    }

    /// Excess of each periodic inclusion (index `j` is the one leaving `Z_j`).
    ///
    /// When the target map is singular and the source image coincides with
    /// the target image the inclusion holds by construction; otherwise the
    /// pseudo-inverse rows give a sufficient test.
    pub fn inclusion_excess(&self, a_dd: &DenseMatrix, a_p: &DenseMatrix) -> Result<Vec<f64>> {
        let m = self.period();
        (0..m)
            .map(|j| {
                let a = if j == 0 { a_dd } else { a_p };
                if a.shape() != (self.dim(), self.dim()) {
                    return Err(Error::InvalidMatrix("inclusion map does not match the family".into()));
                }
                let src = a * &self.maps[j];
                let dst = self.map(j + 1);
                let rows = ImageRows::new(&self.base, dst)?;
                if rows.is_full_rank() {
                    return image_excess(&src, &self.base, &Polytope::new(rows.ineq_y)?);
                }
                let scale = 1.0 + dst.amax();
                if (&src - dst).amax() <= 1e-12 * scale {
                    return Ok(0.0);
                }
                let off_range = rows.eq.clone() * &src;
                let mut worst = image_excess(&src, &self.base, &Polytope::new(rows.ineq_y)?)?;
                for i in 0..off_range.nrows() {
                    let d = off_range.row(i).transpose();
                    let h = self.base.support(&d)?.max(self.base.support(&-d)?);
                    worst = worst.max(h / scale - 1e-12);
                }
                Ok(worst)
            })
            .collect()
    }

    /// `max_{z∈Z_j} b_i·z − 1` over the rows of `bound`, per phase.
    pub fn containment_excess(&self, bound: &Polytope) -> Result<Vec<f64>> {
        self.maps.iter().map(|l| image_excess(l, &self.base, bound)).collect()
    }

    pub fn verify(&self, a_dd: &DenseMatrix, a_p: &DenseMatrix, bound: &Polytope) -> Result<()> {
        if self.base.violation(&DVector::zeros(self.dim()))? >= 0.0 {
            return Err(Error::VerificationFailed {
                index: 0,
                detail: "base polytope does not contain the origin in its interior".into(),
            });
        }
        for (j, e) in self.inclusion_excess(a_dd, a_p)?.into_iter().enumerate() {
            if e > INCLUSION_TOL {
                return Err(Error::VerificationFailed {
                    index: j,
                    detail: format!("periodic inclusion leaving Z_{j} exceeded by {e:e}"),
                });
            }
        }
        for (j, e) in self.containment_excess(bound)?.into_iter().enumerate() {
            if e > INCLUSION_TOL {
                return Err(Error::VerificationFailed {
                    index: j,
                    detail: format!("Z_{j} leaves the constraint set by {e:e}"),
                });
            }
        }
        Ok(())
    }
}

/// `Z_0 = α*Z`, `Z_1 = A″Z_0`, `Z_{j+1} = A′Z_j`; verified before return.
pub fn build_periodic_family(
    z: &Polytope,
    alpha: f64,
    a_dd: &DenseMatrix,
    a_p: &DenseMatrix,
    m: usize,
    bound: &Polytope,
) -> Result<PeriodicPolytopeFamily> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidModel(format!("scaling α* = {alpha} must lie in (0, 1]")));
    }
    if m == 0 {
        return Err(Error::InvalidModel("period must be positive".into()));
    }
    let n = z.dim;
    if a_dd.shape() != (n, n) || a_p.shape() != (n, n) {
        return Err(Error::InvalidMatrix("family maps must match the polytope dimension".into()));
    }
    let mut maps = vec![DMatrix::identity(n, n) * alpha];
    for j in 1..m {
        let a = if j == 1 { a_dd } else { a_p };
        maps.push(a * &maps[j - 1]);
    }
    let fam = PeriodicPolytopeFamily { base: z.clone(), maps };
    fam.verify(a_dd, a_p, bound)?;
    Ok(fam)
}
