//! Convex quadratic programming by a primal active-set method.
//!
//! The equality rows stay in the working set for the whole run; inequality
//! rows enter when they block a step and leave when their multiplier turns
//! negative. Each iteration factors the active rows by QR. A feasible
//! starting point comes from the LP phase-one routine.
//!
//! Steps are computed in the null space of the active rows, which also
//! covers semidefinite Hessians: along a flat direction of the reduced
//! Hessian with nonzero slope we move until a row blocks.

use super::lp::feasible_point;
use super::{min_eig_sym, DenseMatrix, Vector};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// `minimize ½ zᵀHz + fᵀz + constant  s.t.  A z ≤ b,  E z = d`.
#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub hessian: DenseMatrix,
    pub linear: Vector,
    pub constant: f64,
    pub ineq_a: DenseMatrix,
    pub ineq_b: Vector,
    pub eq_a: DenseMatrix,
    pub eq_b: Vector,
}

impl QuadraticProgram {
    pub fn new(hessian: DenseMatrix, linear: Vector) -> Self {
        let n = linear.len();
        QuadraticProgram {
            hessian,
            linear,
            constant: 0.0,
            ineq_a: DMatrix::zeros(0, n),
            ineq_b: DVector::zeros(0),
            eq_a: DMatrix::zeros(0, n),
            eq_b: DVector::zeros(0),
        }
    }

    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant = c;
        self
    }

    pub fn with_inequalities(mut self, a: DenseMatrix, b: Vector) -> Self {
        self.ineq_a = a;
        self.ineq_b = b;
        self
    }

    pub fn with_equalities(mut self, a: DenseMatrix, b: Vector) -> Self {
        self.eq_a = a;
        self.eq_b = b;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, z: &Vector) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z) + self.constant
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let dims_ok = self.hessian.nrows() == n
            && self.hessian.ncols() == n
            && self.ineq_a.nrows() == self.ineq_b.len()
            && (self.ineq_a.nrows() == 0 || self.ineq_a.ncols() == n)
            && self.eq_a.nrows() == self.eq_b.len()
            && (self.eq_a.nrows() == 0 || self.eq_a.ncols() == n);
        if !dims_ok {
            return Err(Error::InvalidMatrix("inconsistent QP dimensions".into()));
        }
        let all_finite = self.hessian.iter().all(|v| v.is_finite())
            && self.linear.iter().all(|v| v.is_finite())
            && self.constant.is_finite()
            && self.ineq_a.iter().all(|v| v.is_finite())
            && self.ineq_b.iter().all(|v| v.is_finite())
            && self.eq_a.iter().all(|v| v.is_finite())
            && self.eq_b.iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidMatrix("non-finite QP data".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QpOutcome {
    Optimal { point: Vector, value: f64 },
    Infeasible,
}

impl QpOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            QpOutcome::Optimal { value, .. } => Some(*value),
            QpOutcome::Infeasible => None,
        }
    }

    pub fn point(&self) -> Option<&Vector> {
        match self {
            QpOutcome::Optimal { point, .. } => Some(point),
            QpOutcome::Infeasible => None,
        }
    }
}

const MAX_ITER: usize = 5_000;
/// Consecutive zero-length steps after which Bland's rule takes over.
const CYCLING_GUARD: usize = 50;
const ZERO_STEP: f64 = 1e-14;

pub fn solve_qp(p: &QuadraticProgram) -> Result<QpOutcome> {
    p.validate()?;
    let n = p.num_vars();
    let h = DMatrix::from_fn(n, n, |i, j| 0.5 * (p.hessian[(i, j)] + p.hessian[(j, i)]));
    let h_scale = 1.0 + h.amax();
    let lam_min = if n == 0 { 0.0 } else { min_eig_sym(&h) };
    if lam_min < -1e-9 * h_scale {
        return Err(Error::InvalidMatrix(format!("QP Hessian is not PSD (min eigenvalue {lam_min:e})")));
    }

    // feasibility on the stacked system
    let m_in = p.ineq_a.nrows();
    let m_eq = p.eq_a.nrows();
    let mut g = DMatrix::zeros(m_in + 2 * m_eq, n);
    let mut hv = DVector::zeros(m_in + 2 * m_eq);
    if n > 0 {
        g.view_mut((0, 0), (m_in, n)).copy_from(&p.ineq_a);
        g.view_mut((m_in, 0), (m_eq, n)).copy_from(&p.eq_a);
        g.view_mut((m_in + m_eq, 0), (m_eq, n)).copy_from(&(-&p.eq_a));
    }
    hv.rows_mut(0, m_in).copy_from(&p.ineq_b);
    hv.rows_mut(m_in, m_eq).copy_from(&p.eq_b);
    hv.rows_mut(m_in + m_eq, m_eq).copy_from(&(-&p.eq_b));
    let Some(start) = feasible_point(&g, &hv)? else {
        return Ok(QpOutcome::Infeasible);
    };
    if n == 0 {
        return Ok(QpOutcome::Optimal { point: start, value: p.constant });
    }

    let eq_rows = independent_rows(&p.eq_a);
    let curvature = Curvature { strongly_convex: lam_min > 1e-10 * h_scale, tol: 1e-10 * h_scale };
    let z = active_set(&h, p, &eq_rows, start, curvature)?;
    let value = p.objective(&z);
    Ok(QpOutcome::Optimal { point: z, value })
}

#[derive(Debug, Clone, Copy)]
struct Curvature {
    strongly_convex: bool,
    /// Reduced-Hessian eigenvalues below this count as flat.
    tol: f64,
}

/// Greedy selection of a linearly independent subset of rows.
fn independent_rows(a: &DenseMatrix) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for i in 0..a.nrows() {
        let mut r: DVector<f64> = a.row(i).transpose();
        let norm0 = r.norm();
        if norm0 == 0.0 {
            continue;
        }
        for q in &basis {
            let d = q.dot(&r);
            r -= q * d;
        }
        let nr = r.norm();
        if nr > 1e-10 * norm0 {
            basis.push(r / nr);
            keep.push(i);
        }
    }
    keep
}

/// Orthogonal factor `Qᵀ` (full, `n × n`) and triangular `R` of the active
/// rows stacked as columns. The last `n − k` rows of `Qᵀ` span the face.
fn factor_face(p: &QuadraticProgram, eq_rows: &[usize], working: &[usize], n: usize) -> (DenseMatrix, DenseMatrix) {
    let k = eq_rows.len() + working.len();
    if k == 0 {
        return (DMatrix::identity(n, n), DMatrix::zeros(0, 0));
    }
    let mut wt = DMatrix::zeros(n, k);
    for (c, &row) in eq_rows.iter().enumerate() {
        wt.set_column(c, &p.eq_a.row(row).transpose());
    }
    for (c, &row) in working.iter().enumerate() {
        wt.set_column(eq_rows.len() + c, &p.ineq_a.row(row).transpose());
    }
    let qr = wt.qr();
    let mut qt = DMatrix::identity(n, n);
    qr.q_tr_mul(&mut qt);
    (qt, qr.r())
}

/// Primal active-set iterations in the null space of the active rows.
///
/// On each face the step is the reduced Newton step; if the reduced Hessian
/// is singular and the gradient has a component along its kernel, we follow
/// that zero-curvature descent ray until a row blocks it.
fn active_set(
    h: &DenseMatrix,
    p: &QuadraticProgram,
    eq_rows: &[usize],
    mut z: Vector,
    curv: Curvature,
) -> Result<Vector> {
    let n = z.len();
    let a = &p.ineq_a;
    let b = &p.ineq_b;
    let m = a.nrows();
    let ne = eq_rows.len();
    let row_norms: Vec<f64> = (0..m).map(|i| a.row(i).norm()).collect();
    let mut working: Vec<usize> = Vec::new();
    let mut in_working = vec![false; m];
    let mut zero_steps = 0usize;

    for _ in 0..MAX_ITER {
        let k = ne + working.len();
        let (qt, r) = factor_face(p, eq_rows, &working, n);
        let grad = h * &z + &p.linear;
        let grad_scale = 1.0 + grad.amax();
        let nz = n - k;
        let mut ray = false;
        let step = if nz == 0 {
            DVector::zeros(n)
        } else {
            let zb = qt.rows(k, nz).transpose();
            let gr = zb.transpose() * &grad;
            let hr = zb.transpose() * h * &zb;
            let reduced = if curv.strongly_convex {
                let chol = hr.cholesky().ok_or_else(|| Error::Solver("reduced QP Hessian lost definiteness".into()))?;
                -chol.solve(&gr)
            } else {
                let eig = hr.symmetric_eigen();
                let mut newton = DVector::zeros(nz);
                let mut flat = DVector::zeros(nz);
                for i in 0..nz {
                    let v = eig.eigenvectors.column(i);
                    let c = v.dot(&gr);
                    if eig.eigenvalues[i] > curv.tol {
                        newton -= v * (c / eig.eigenvalues[i]);
                    } else {
                        flat -= v * c;
                    }
                }
                if flat.norm() > 1e-12 * grad_scale {
                    ray = true;
                    flat
                } else {
                    newton
                }
            };
            zb * reduced
        };

        if !ray && step.amax() <= 1e-12 * (1.0 + z.amax()) {
            // stationary on the face: grad + Σ λ_i a_i = 0
            if working.is_empty() {
                return Ok(z);
            }
            let rhs = -(qt.rows(0, k) * &grad);
            let lambda =
                r.solve_upper_triangular(&rhs).ok_or_else(|| Error::Solver("singular working set in QP".into()))?;
            let tol = 1e-10 * grad_scale;
            let negative = (0..working.len()).filter(|&w| lambda[ne + w] < -tol);
            let leave = if zero_steps > CYCLING_GUARD {
                negative.min_by_key(|&w| working[w])
            } else {
                negative.min_by(|&x, &y| lambda[ne + x].total_cmp(&lambda[ne + y]))
            };
            match leave {
                None => return Ok(z),
                Some(w) => {
                    let row = working.remove(w);
                    in_working[row] = false;
                }
            }
            continue;
        }

        let mut alpha = if ray { f64::INFINITY } else { 1.0 };
        let mut blocking = None;
        let step_norm = step.norm();
        let basis = qt.rows(0, k);
        for i in 0..m {
            if in_working[i] || row_norms[i] == 0.0 {
                continue;
            }
            // rows in the span of the active set cannot block in exact
            // arithmetic and would make it dependent
            let ai = a.row(i).transpose();
            if k >= n || (&ai - basis.transpose() * (basis * &ai)).norm() <= 1e-9 * row_norms[i] {
                continue;
            }
            let ap = ai.dot(&step);
            if ap <= 1e-13 * row_norms[i] * step_norm {
                continue;
            }
            let slack = (b[i] - ai.dot(&z)).max(0.0);
            let t = slack / ap;
            // ties at a degenerate point go to the smallest index
            let tie = t <= ZERO_STEP && alpha <= ZERO_STEP;
            if t < alpha && !(tie && zero_steps > CYCLING_GUARD) {
                alpha = t;
                blocking = Some(i);
            }
        }
        if alpha.is_infinite() {
            return Err(Error::Solver("QP is unbounded below".into()));
        }
        zero_steps = if alpha * step_norm <= ZERO_STEP * (1.0 + z.amax()) { zero_steps + 1 } else { 0 };
        z += &step * alpha;
        if let Some(i) = blocking {
            working.push(i);
            in_working[i] = true;
        }
    }
    Err(Error::NotConverged(MAX_ITER))
}

/// Orthonormal basis of the active equality and working rows.
pub(crate) fn active_basis(
    eq_a: &DenseMatrix,
    eq_rows: &[usize],
    a: &DenseMatrix,
    working: &[usize],
) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let rows = eq_rows.iter().map(|&i| eq_a.row(i).transpose()).chain(working.iter().map(|&i| a.row(i).transpose()));
    for r in rows {
        let norm0 = r.norm();
        let mut r = r;
        for q in &basis {
            let d = q.dot(&r);
            r -= q * d;
        }
        let nr = r.norm();
        if nr > 1e-10 * norm0 {
            basis.push(r / nr);
        }
    }
    basis
}

pub(crate) fn in_span(basis: &[DVector<f64>], r: &DVector<f64>, norm: f64) -> bool {
    let mut r = r.clone();
    for q in basis {
        let d = q.dot(&r);
        r -= q * d;
    }
    r.norm() <= 1e-9 * norm
}
