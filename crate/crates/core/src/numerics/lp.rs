//! Dense linear programming for small variable counts.
//!
//! The method works directly in the space of the decision variables: it keeps
//! a feasible point and a linearly independent working set of active rows,
//! moves along the projection of the objective onto the working set's null
//! space, and releases rows whose multipliers turn negative. This is the
//! primal simplex method seen from the inequality side, so each iteration
//! costs `O(m n)` for the ratio test plus a tiny least-squares solve. Our
//! programs have at most a dozen variables and a few hundred rows.
//!
//! Infeasible starts go through a phase-one problem with one extra slack.

use super::qp::{active_basis, in_span};
use super::{DenseMatrix, Vector};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// `maximize (or minimize) c·z  s.t.  A z ≤ b,  E z = f`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vector,
    pub maximize: bool,
    pub ineq_a: DenseMatrix,
    pub ineq_b: Vector,
    pub eq_a: DenseMatrix,
    pub eq_b: Vector,
}

impl LinearProgram {
    pub fn maximize(objective: Vector, ineq_a: DenseMatrix, ineq_b: Vector) -> Self {
        let n = objective.len();
        LinearProgram { objective, maximize: true, ineq_a, ineq_b, eq_a: DMatrix::zeros(0, n), eq_b: DVector::zeros(0) }
    }

    pub fn minimize(objective: Vector, ineq_a: DenseMatrix, ineq_b: Vector) -> Self {
        LinearProgram { maximize: false, ..Self::maximize(objective, ineq_a, ineq_b) }
    }

    pub fn with_equalities(mut self, eq_a: DenseMatrix, eq_b: Vector) -> Self {
        self.eq_a = eq_a;
        self.eq_b = eq_b;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.ineq_a.ncols() != n && self.ineq_a.nrows() > 0
            || self.ineq_a.nrows() != self.ineq_b.len()
            || self.eq_a.ncols() != n && self.eq_a.nrows() > 0
            || self.eq_a.nrows() != self.eq_b.len()
        {
            return Err(Error::InvalidMatrix("inconsistent LP dimensions".into()));
        }
        let finite = self.objective.iter().all(|v| v.is_finite())
            && self.ineq_a.iter().all(|v| v.is_finite())
            && self.ineq_b.iter().all(|v| v.is_finite())
            && self.eq_a.iter().all(|v| v.is_finite())
            && self.eq_b.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidMatrix("non-finite LP data".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { point: Vector, value: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            LpOutcome::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }
}

const FEAS_TOL: f64 = 1e-9;
const MAX_ITER: usize = 20_000;
const DEGENERATE_STEP: f64 = 1e-14;

pub fn solve_lp(p: &LinearProgram) -> Result<LpOutcome> {
    p.validate()?;
    let n = p.num_vars();
    // stack inequalities and both halves of each equality
    let m_in = p.ineq_a.nrows();
    let m_eq = p.eq_a.nrows();
    let m = m_in + 2 * m_eq;
    let mut g = DMatrix::zeros(m, n);
    let mut h = DVector::zeros(m);
    if n > 0 {
        g.view_mut((0, 0), (m_in, n)).copy_from(&p.ineq_a);
    }
    h.rows_mut(0, m_in).copy_from(&p.ineq_b);
    for e in 0..m_eq {
        for j in 0..n {
            g[(m_in + 2 * e, j)] = p.eq_a[(e, j)];
            g[(m_in + 2 * e + 1, j)] = -p.eq_a[(e, j)];
        }
        h[m_in + 2 * e] = p.eq_b[e];
        h[m_in + 2 * e + 1] = -p.eq_b[e];
    }
    let c = if p.maximize { p.objective.clone() } else { -p.objective.clone() };

    let start = match feasible_point(&g, &h)? {
        Some(z) => z,
        None => return Ok(LpOutcome::Infeasible),
    };
    match active_set_max(&g, &h, &c, start)? {
        Some(z) => {
            let value = p.objective.dot(&z);
            Ok(LpOutcome::Optimal { point: z, value })
        }
        None => Ok(LpOutcome::Unbounded),
    }
}

/// Returns a point with `G z ≤ h + tol`, or `None` if the system is infeasible.
pub(crate) fn feasible_point(g: &DenseMatrix, h: &Vector) -> Result<Option<Vector>> {
    let (m, n) = (g.nrows(), g.ncols());
    let worst = h.iter().fold(0.0_f64, |acc, v| acc.max(-v));
    if worst <= 0.0 {
        return Ok(Some(DVector::zeros(n)));
    }
    if n == 0 {
        return Ok(None);
    }
    // maximize -s  s.t.  G z - s ≤ h,  -s ≤ 0
    let mut ga = DMatrix::zeros(m + 1, n + 1);
    ga.view_mut((0, 0), (m, n)).copy_from(g);
    for i in 0..m {
        ga[(i, n)] = -1.0;
    }
    ga[(m, n)] = -1.0;
    let mut ha = DVector::zeros(m + 1);
    ha.rows_mut(0, m).copy_from(h);
    let mut ca = DVector::zeros(n + 1);
    ca[n] = -1.0;
    let mut start = DVector::zeros(n + 1);
    start[n] = worst;
    let sol =
        active_set_max(&ga, &ha, &ca, start)?.ok_or_else(|| Error::Solver("phase-one LP reported unbounded".into()))?;
    let scale = 1.0 + h.amax();
    if sol[n] > FEAS_TOL * scale {
        return Ok(None);
    }
    Ok(Some(sol.rows(0, n).into_owned()))
}

/// Maximizes `c·z` over `G z ≤ h` from a feasible `z`. `None` means unbounded.
fn active_set_max(g: &DenseMatrix, h: &Vector, c: &Vector, mut z: Vector) -> Result<Option<Vector>> {
    let (m, n) = (g.nrows(), g.ncols());
    if n == 0 {
        return Ok(Some(z));
    }
    let c_norm = c.norm();
    if c_norm == 0.0 {
        return Ok(Some(z));
    }
    let row_norms: Vec<f64> = (0..m).map(|i| g.row(i).norm()).collect();
    let mut working: Vec<usize> = Vec::with_capacity(n);
    let mut in_working = vec![false; m];
    let mut degenerate_steps = 0usize;
    let empty = DMatrix::zeros(0, n);

    for _ in 0..MAX_ITER {
        let (dir, lambda) = project(g, &working, c);
        if working.len() < n && dir.norm() > 1e-10 * c_norm {
            // ratio test along dir; rows in the span of the working set
            // cannot block in exact arithmetic and would make it singular
            let basis = active_basis(&empty, &[], g, &working);
            let mut best: Option<(f64, usize)> = None;
            for i in 0..m {
                if in_working[i] || row_norms[i] == 0.0 || in_span(&basis, &g.row(i).transpose(), row_norms[i]) {
                    continue;
                }
                let gd = g.row(i).dot(&dir.transpose());
                if gd <= 1e-12 * row_norms[i] * dir.norm() {
                    continue;
                }
                let slack = (h[i] - g.row(i).dot(&z.transpose())).max(0.0);
                let t = slack / gd;
                // ties at a degenerate vertex go to the smallest index (Bland)
                match best {
                    Some((bt, _)) if t >= bt || (bt <= DEGENERATE_STEP && t <= DEGENERATE_STEP) => {}
                    _ => best = Some((t, i)),
                }
            }
            let Some((t, i)) = best else {
                return Ok(None);
            };
            if t <= DEGENERATE_STEP {
                degenerate_steps += 1;
            } else {
                degenerate_steps = 0;
            }
            z += &dir * t;
            working.push(i);
            in_working[i] = true;
        } else {
            // stationary on the current face; release a row with negative multiplier
            let tol = 1e-10 * c_norm;
            let candidate = if degenerate_steps > 50 {
                // Bland: smallest constraint index with a negative multiplier
                working
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| lambda[*k] < -tol)
                    .min_by_key(|(_, &row)| row)
                    .map(|(k, _)| k)
            } else {
                let mut worst: Option<(f64, usize)> = None;
                for (k, _) in working.iter().enumerate() {
                    if lambda[k] < -tol && worst.is_none_or(|(w, _)| lambda[k] < w) {
                        worst = Some((lambda[k], k));
                    }
                }
                worst.map(|(_, k)| k)
            };
            match candidate {
                None => return Ok(Some(z)),
                Some(k) => {
                    let row = working.remove(k);
                    in_working[row] = false;
                }
            }
        }
    }
    Err(Error::Solver(format!("LP did not terminate in {MAX_ITER} iterations")))
}

/// Splits `c` into the component orthogonal to the working rows and the
/// least-squares multipliers `λ` with `c ≈ Σ λ_k G_{W_k}`.
fn project(g: &DenseMatrix, working: &[usize], c: &Vector) -> (Vector, Vec<f64>) {
    if working.is_empty() {
        return (c.clone(), Vec::new());
    }
    let n = g.ncols();
    let k = working.len();
    let mut gw_t = DMatrix::zeros(n, k);
    for (col, &row) in working.iter().enumerate() {
        for j in 0..n {
            gw_t[(j, col)] = g[(row, j)];
        }
    }
    let qr = gw_t.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let qtc = q.transpose() * c;
    let lambda = r.solve_upper_triangular(&qtc).unwrap_or_else(|| DVector::zeros(k));
    let dir = c - &gw_t * &lambda;
    (dir, lambda.iter().copied().collect())
}
