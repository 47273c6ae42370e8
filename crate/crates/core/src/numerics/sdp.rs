//! Small dense semidefinite feasibility problems.
//!
//! A program is a set of matrix-shaped decision variables and a list of
//! block LMIs whose blocks are sums of terms `L·V·R`. We maximize a common
//! margin `t` with every block `F_i(x) − tI ⪰ 0` using a log-barrier
//! path-following method (Newton steps, backtracking that never leaves the
//! interior). The program is declared feasible when the margin reaches
//! `strict_margin`; infeasibility is reported as soon as the duality bound
//! `t + ν/s` drops below it. If the Newton budget runs out on a badly scaled
//! problem after a strictly feasible point was found, that point is kept.
//!
//! Decision variables are kept inside the box `|x_k| ≤ box_bound`, and the
//! margin is capped, so the centering problems are always bounded.

use super::{min_eig_sym, DenseMatrix};
use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarShape {
    Symmetric(usize),
    Full(usize, usize),
}

impl VarShape {
    pub fn dims(&self) -> (usize, usize) {
        match *self {
            VarShape::Symmetric(n) => (n, n),
            VarShape::Full(r, c) => (r, c),
        }
    }

    fn coords(&self) -> usize {
        match *self {
            VarShape::Symmetric(n) => n * (n + 1) / 2,
            VarShape::Full(r, c) => r * c,
        }
    }

    /// Matrix with a single unit coordinate set.
    fn basis(&self, k: usize) -> DMatrix<f64> {
        let (r, c) = self.dims();
        let mut e = DMatrix::zeros(r, c);
        match *self {
            VarShape::Symmetric(n) => {
                let (i, j) = sym_index(n, k);
                e[(i, j)] = 1.0;
                e[(j, i)] = 1.0;
            }
            VarShape::Full(_, cols) => e[(k / cols, k % cols)] = 1.0,
        }
        e
    }

    fn assemble(&self, x: &[f64]) -> DMatrix<f64> {
        let (r, c) = self.dims();
        let mut m = DMatrix::zeros(r, c);
        match *self {
            VarShape::Symmetric(n) => {
                for (k, v) in x.iter().enumerate() {
                    let (i, j) = sym_index(n, k);
                    m[(i, j)] = *v;
                    m[(j, i)] = *v;
                }
            }
            VarShape::Full(_, cols) => {
                for (k, v) in x.iter().enumerate() {
                    m[(k / cols, k % cols)] = *v;
                }
            }
        }
        m
    }
}

fn sym_index(n: usize, mut k: usize) -> (usize, usize) {
    for i in 0..n {
        let row_len = n - i;
        if k < row_len {
            return (i, i + k);
        }
        k -= row_len;
    }
    unreachable!("symmetric coordinate out of range")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(usize);

impl VarId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Term {
    row: usize,
    col: usize,
    left: DenseMatrix,
    var: VarId,
    right: DenseMatrix,
    scale: f64,
}

/// A block-structured affine matrix inequality `F(V_1, …, V_p) ⪰ 0`.
///
/// Content placed in an off-diagonal block `(i, j)` is mirrored to `(j, i)`
/// transposed; content placed in a diagonal block is symmetrized.
#[derive(Debug, Clone)]
pub struct BlockLmi {
    pub name: String,
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    constant: DenseMatrix,
    terms: Vec<Term>,
}

impl BlockLmi {
    pub fn new(name: impl Into<String>, sizes: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for s in sizes {
            offsets.push(acc);
            acc += s;
        }
        BlockLmi {
            name: name.into(),
            sizes: sizes.to_vec(),
            offsets,
            constant: DMatrix::zeros(acc, acc),
            terms: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    fn check_block(&self, row: usize, col: usize, r: usize, c: usize) -> Result<()> {
        if row >= self.sizes.len() || col >= self.sizes.len() {
            return Err(Error::InvalidMatrix(format!("{}: block index out of range", self.name)));
        }
        if self.sizes[row] != r || self.sizes[col] != c {
            return Err(Error::InvalidMatrix(format!(
                "{}: block ({row},{col}) expects {}x{}, got {r}x{c}",
                self.name, self.sizes[row], self.sizes[col]
            )));
        }
        Ok(())
    }

    pub fn add_constant(&mut self, row: usize, col: usize, m: &DenseMatrix) -> Result<()> {
        self.check_block(row, col, m.nrows(), m.ncols())?;
        place(&mut self.constant, &self.offsets, row, col, m, 1.0);
        Ok(())
    }

    /// Adds `scale · left · V · right` to block `(row, col)`.
    pub fn add_term(
        &mut self,
        row: usize,
        col: usize,
        left: &DenseMatrix,
        var: VarId,
        right: &DenseMatrix,
        scale: f64,
    ) -> Result<()> {
        self.check_block(row, col, left.nrows(), right.ncols())?;
        self.terms.push(Term { row, col, left: left.clone(), var, right: right.clone(), scale });
        Ok(())
    }

    /// Adds `V` itself (identity factors) to block `(row, col)`.
    pub fn add_var(&mut self, row: usize, col: usize, var: VarId, shape: VarShape) -> Result<()> {
        let (r, c) = shape.dims();
        self.add_term(row, col, &DMatrix::identity(r, r), var, &DMatrix::identity(c, c), 1.0)
    }

    fn vars(&self) -> Vec<VarId> {
        let mut v: Vec<VarId> = self.terms.iter().map(|t| t.var).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Evaluates the full symmetric matrix at concrete variable values.
    pub fn evaluate(&self, values: &[DenseMatrix]) -> Result<DenseMatrix> {
        let mut out = self.constant.clone();
        for t in &self.terms {
            let v = values
                .get(t.var.0)
                .ok_or_else(|| Error::InvalidMatrix(format!("{}: missing variable value", self.name)))?;
            if t.left.ncols() != v.nrows() || v.ncols() != t.right.nrows() {
                return Err(Error::InvalidMatrix(format!("{}: variable shape mismatch", self.name)));
            }
            let m = &t.left * v * &t.right;
            place(&mut out, &self.offsets, t.row, t.col, &m, t.scale);
        }
        Ok(out)
    }
}

fn place(target: &mut DenseMatrix, offsets: &[usize], row: usize, col: usize, m: &DenseMatrix, scale: f64) {
    let (r0, c0) = (offsets[row], offsets[col]);
    if row == col {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                target[(r0 + i, c0 + j)] += 0.5 * scale * (m[(i, j)] + m[(j, i)]);
            }
        }
    } else {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                target[(r0 + i, c0 + j)] += scale * m[(i, j)];
                target[(c0 + j, r0 + i)] += scale * m[(i, j)];
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SemidefiniteProgram {
    shapes: Vec<VarShape>,
    names: Vec<String>,
    strict: Vec<VarId>,
    blocks: Vec<BlockLmi>,
    objective: Vec<(VarId, DenseMatrix)>,
}

impl SemidefiniteProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, shape: VarShape) -> VarId {
        self.shapes.push(shape);
        self.names.push(name.into());
        VarId(self.shapes.len() - 1)
    }

    /// Symmetric variable that must be positive definite.
    pub fn add_strict_var(&mut self, name: impl Into<String>, n: usize) -> VarId {
        let id = self.add_var(name, VarShape::Symmetric(n));
        self.strict.push(id);
        id
    }

    pub fn shape(&self, v: VarId) -> VarShape {
        self.shapes[v.0]
    }

    pub fn add_block(&mut self, b: BlockLmi) {
        self.blocks.push(b);
    }

    pub fn blocks(&self) -> &[BlockLmi] {
        &self.blocks
    }

    /// Adds `⟨C, V⟩` to the (maximized) objective.
    pub fn add_objective(&mut self, var: VarId, c: DenseMatrix) {
        self.objective.push((var, c));
    }

    fn validate(&self) -> Result<()> {
        for b in &self.blocks {
            for t in &b.terms {
                let shape = self
                    .shapes
                    .get(t.var.0)
                    .ok_or_else(|| Error::InvalidMatrix(format!("{}: unknown variable", b.name)))?;
                let (r, c) = shape.dims();
                if t.left.ncols() != r || t.right.nrows() != c {
                    return Err(Error::InvalidMatrix(format!(
                        "{}: term factor does not match variable {}",
                        b.name, self.names[t.var.0]
                    )));
                }
            }
            if b.constant.iter().any(|v| !v.is_finite())
                || b.terms.iter().any(|t| t.left.iter().chain(t.right.iter()).any(|v| !v.is_finite()))
            {
                return Err(Error::InvalidMatrix(format!("{}: non-finite data", b.name)));
            }
        }
        for (v, c) in &self.objective {
            let shape = self
                .shapes
                .get(v.0)
                .ok_or_else(|| Error::InvalidMatrix("objective references unknown variable".into()))?;
            if shape.dims() != (c.nrows(), c.ncols()) {
                return Err(Error::InvalidMatrix("objective weight shape mismatch".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SdpOptions {
    pub box_bound: f64,
    pub margin_cap: f64,
    pub strict_margin: f64,
    pub gap_tol: f64,
    pub max_newton: usize,
    /// Fraction of the achieved margin kept while optimizing the objective.
    pub objective_margin_fraction: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        SdpOptions {
            box_bound: 1e4,
            margin_cap: 1.0,
            strict_margin: 1e-9,
            gap_tol: 1e-7,
            max_newton: 4_000,
            objective_margin_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub enum SdpOutcome {
    Feasible { values: Vec<DenseMatrix>, objective: f64, margin: f64 },
    Infeasible { margin_bound: f64 },
}

impl SdpOutcome {
    pub fn is_feasible(&self) -> bool {
        matches!(self, SdpOutcome::Feasible { .. })
    }

    pub fn value(&self, v: VarId) -> Option<&DenseMatrix> {
        match self {
            SdpOutcome::Feasible { values, .. } => values.get(v.0),
            SdpOutcome::Infeasible { .. } => None,
        }
    }
}

/// One LMI in coordinate form: `F0 + Σ x_k G_k − t·w·I`.
struct Compiled {
    f0: DenseMatrix,
    coords: Vec<(usize, DenseMatrix)>,
}

struct Barrier<'a> {
    lmis: &'a [Compiled],
    nx: usize,
    opts: &'a SdpOptions,
    /// Linear objective on `(x, t)` that is maximized.
    c: DVector<f64>,
    /// Whether `t` is a variable (phase one) or fixed (objective phase).
    t_fixed: Option<f64>,
}

impl Barrier<'_> {
    fn dim(&self) -> usize {
        self.nx + usize::from(self.t_fixed.is_none())
    }

    fn t_of(&self, y: &DVector<f64>) -> f64 {
        self.t_fixed.unwrap_or_else(|| y[self.nx])
    }

    fn slack(&self, l: &Compiled, y: &DVector<f64>) -> DenseMatrix {
        let mut s = l.f0.clone();
        for (k, g) in &l.coords {
            let xk = y[*k];
            if xk != 0.0 {
                s += g * xk;
            }
        }
        let t = self.t_of(y);
        for i in 0..s.nrows() {
            s[(i, i)] -= t;
        }
        s
    }

    fn nu(&self) -> f64 {
        let m: usize = self.lmis.iter().map(|l| l.f0.nrows()).sum();
        (m + 2 * self.nx + usize::from(self.t_fixed.is_none())) as f64
    }

    /// `s·(−cᵀy) + φ(y)`; `None` outside the domain.
    fn value(&self, y: &DVector<f64>, s: f64) -> Option<f64> {
        let mut f = -s * self.c.dot(y);
        for l in self.lmis {
            let chol = Cholesky::new(self.slack(l, y))?;
            f -= 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        let b = self.opts.box_bound;
        for k in 0..self.nx {
            let (lo, hi) = (b + y[k], b - y[k]);
            if lo <= 0.0 || hi <= 0.0 {
                return None;
            }
            f -= lo.ln() + hi.ln();
        }
        if self.t_fixed.is_none() {
            let gap = self.opts.margin_cap - y[self.nx];
            if gap <= 0.0 {
                return None;
            }
            f -= gap.ln();
        }
        f.is_finite().then_some(f)
    }

    fn grad_hess(&self, y: &DVector<f64>, s: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let d = self.dim();
        let mut g = -&self.c * s;
        let mut h = DMatrix::zeros(d, d);
        for l in self.lmis {
            let sl = self.slack(l, y);
            let m = sl.nrows();
            let inv = Cholesky::new(sl).ok_or_else(|| Error::Solver("barrier left the interior".into()))?.inverse();
            let mut ws: Vec<(usize, DenseMatrix)> = l.coords.iter().map(|(k, gk)| (*k, &inv * gk)).collect();
            if self.t_fixed.is_none() {
                ws.push((self.nx, -&inv));
            }
            for (a, (ka, wa)) in ws.iter().enumerate() {
                g[*ka] -= wa.trace();
                for (kb, wb) in ws.iter().skip(a) {
                    // tr(W_a W_b)
                    let mut acc = 0.0;
                    for i in 0..m {
                        for j in 0..m {
                            acc += wa[(i, j)] * wb[(j, i)];
                        }
                    }
                    h[(*ka, *kb)] += acc;
                    if ka != kb {
                        h[(*kb, *ka)] += acc;
                    }
                }
            }
        }
        let b = self.opts.box_bound;
        for k in 0..self.nx {
            let (lo, hi) = (b + y[k], b - y[k]);
            g[k] += 1.0 / hi - 1.0 / lo;
            h[(k, k)] += 1.0 / (hi * hi) + 1.0 / (lo * lo);
        }
        if self.t_fixed.is_none() {
            let gap = self.opts.margin_cap - y[self.nx];
            g[self.nx] += 1.0 / gap;
            h[(self.nx, self.nx)] += 1.0 / (gap * gap);
        }
        Ok((g, h))
    }

    /// Newton centering for fixed `s`; returns the number of steps taken.
    fn center(&self, y: &mut DVector<f64>, s: f64, budget: usize) -> Result<usize> {
        let mut f = self.value(y, s).ok_or_else(|| Error::Solver("centering started outside the domain".into()))?;
        for it in 0..budget {
            let (g, h) = self.grad_hess(y, s)?;
            let step = match Cholesky::<f64, Dyn>::new(h.clone()) {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    let reg = h.clone() + DMatrix::identity(h.nrows(), h.nrows()) * 1e-12 * (1.0 + h.amax());
                    reg.lu().solve(&(-&g)).ok_or_else(|| Error::Solver("singular barrier Hessian".into()))?
                }
            };
            let dec = -g.dot(&step);
            if dec < 0.0 || !dec.is_finite() {
                return Err(Error::Solver("barrier Newton step is not a descent direction".into()));
            }
            if dec / 2.0 <= 1e-10 {
                return Ok(it);
            }
            let mut alpha = 1.0;
            loop {
                let trial = &*y + &step * alpha;
                if let Some(ft) = self.value(&trial, s) {
                    if ft <= f - 0.25 * alpha * dec {
                        *y = trial;
                        f = ft;
                        break;
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-14 {
                    // no further progress representable
                    return Ok(it + 1);
                }
            }
        }
        Ok(budget)
    }
}

pub fn solve_sdp(p: &SemidefiniteProgram) -> Result<SdpOutcome> {
    solve_sdp_with(p, &SdpOptions::default())
}

pub fn solve_sdp_with(p: &SemidefiniteProgram, opts: &SdpOptions) -> Result<SdpOutcome> {
    p.validate()?;
    let mut var_offsets = Vec::with_capacity(p.shapes.len());
    let mut nx = 0;
    for s in &p.shapes {
        var_offsets.push(nx);
        nx += s.coords();
    }

    // strict variables become extra blocks V ⪰ tI
    let mut blocks: Vec<BlockLmi> = p.blocks.clone();
    for v in &p.strict {
        let shape = p.shapes[v.0];
        let mut b = BlockLmi::new(format!("{} > 0", p.names[v.0]), &[shape.dims().0]);
        b.add_var(0, 0, *v, shape)?;
        blocks.push(b);
    }
    let mut lmis = Vec::with_capacity(blocks.len());
    for b in &blocks {
        if b.dim() == 0 {
            continue;
        }
        let mut coords = Vec::new();
        for v in b.vars() {
            let shape = p.shapes[v.0];
            for k in 0..shape.coords() {
                let mut g = DMatrix::zeros(b.dim(), b.dim());
                let e = shape.basis(k);
                for t in b.terms.iter().filter(|t| t.var == v) {
                    let m = &t.left * &e * &t.right;
                    place(&mut g, &b.offsets, t.row, t.col, &m, t.scale);
                }
                if g.amax() > 0.0 {
                    coords.push((var_offsets[v.0] + k, g));
                }
            }
        }
        lmis.push(Compiled { f0: b.constant.clone(), coords });
    }
    if lmis.is_empty() {
        let values = p.shapes.iter().map(|s| s.assemble(&vec![0.0; s.coords()])).collect();
        return Ok(SdpOutcome::Feasible { values, objective: 0.0, margin: f64::INFINITY });
    }

    // phase one: maximize the margin
    let mut c = DVector::zeros(nx + 1);
    c[nx] = 1.0;
    let bar = Barrier { lmis: &lmis, nx, opts, c, t_fixed: None };
    let mut y = DVector::zeros(nx + 1);
    let t0 = lmis.iter().map(|l| min_eig_sym(&l.f0)).fold(f64::INFINITY, f64::min);
    y[nx] = (t0 - 1.0).min(opts.margin_cap - 1.0);
    let nu = bar.nu();
    let mut s = 1.0 / (1.0 + t0.abs());
    let mut newton = 0;
    loop {
        newton += bar.center(&mut y, s, opts.max_newton - newton)?;
        if newton >= opts.max_newton {
            // badly scaled but strictly feasible: keep the point found so far
            if y[nx] >= opts.strict_margin {
                log::debug!("sdp stalled at margin {:e}; keeping the strictly feasible point", y[nx]);
                break;
            }
            return Err(Error::NotConverged(newton));
        }
        let t = y[nx];
        let bound = t + nu / s;
        if bound < opts.strict_margin {
            log::debug!("sdp infeasible: margin bound {bound:e} after {newton} Newton steps");
            return Ok(SdpOutcome::Infeasible { margin_bound: bound });
        }
        if nu / s <= opts.gap_tol * (1.0 + t.abs()) {
            break;
        }
        s *= 10.0;
    }
    let margin = y[nx];
    log::debug!("sdp margin {margin:e} after {newton} Newton steps");
    if margin < opts.strict_margin {
        return Ok(SdpOutcome::Infeasible { margin_bound: margin + nu / s });
    }

    let mut x = y.rows(0, nx).into_owned();
    let mut objective = 0.0;
    if !p.objective.is_empty() {
        let mut c = DVector::zeros(nx);
        for (v, w) in &p.objective {
            let shape = p.shapes[v.0];
            for k in 0..shape.coords() {
                c[var_offsets[v.0] + k] += shape.basis(k).component_mul(w).sum();
            }
        }
        let keep = (margin * opts.objective_margin_fraction).max(opts.strict_margin);
        let bar2 = Barrier { lmis: &lmis, nx, opts, c: c.clone(), t_fixed: Some(keep) };
        let nu2 = bar2.nu();
        let mut s2 = 1.0;
        let mut steps = 0;
        loop {
            steps += bar2.center(&mut x, s2, opts.max_newton)?;
            if nu2 / s2 <= opts.gap_tol * (1.0 + c.dot(&x).abs()) || steps > opts.max_newton {
                break;
            }
            s2 *= 10.0;
        }
        objective = c.dot(&x);
    }

    let values: Vec<DenseMatrix> = p
        .shapes
        .iter()
        .zip(&var_offsets)
        .map(|(s, off)| s.assemble(x.as_slice()[*off..*off + s.coords()].as_ref()))
        .collect();

    // independent check through direct evaluation
    for b in &p.blocks {
        let f = b.evaluate(&values)?;
        let lam = if f.nrows() == 0 { f64::INFINITY } else { min_eig_sym(&f) };
        if lam < -1e-7 {
            return Err(Error::Solver(format!("{}: returned point violates the LMI (min eigenvalue {lam:e})", b.name)));
        }
    }
    for v in &p.strict {
        let lam = min_eig_sym(&values[v.0]);
        if lam < opts.strict_margin.min(1e-9) {
            return Err(Error::Solver(format!("{} is not positive definite (min eigenvalue {lam:e})", p.names[v.0])));
        }
    }
    Ok(SdpOutcome::Feasible { values, objective, margin })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one() -> DenseMatrix {
        DMatrix::identity(1, 1)
    }

    #[test]
    fn scalar_above_one() {
        let mut p = SemidefiniteProgram::new();
        let x = p.add_var("x", VarShape::Symmetric(1));
        let mut b = BlockLmi::new("x - 1", &[1]);
        b.add_var(0, 0, x, VarShape::Symmetric(1)).unwrap();
        b.add_constant(0, 0, &(-one())).unwrap();
        p.add_block(b);
        let out = solve_sdp(&p).unwrap();
        assert!(out.value(x).unwrap()[(0, 0)] >= 1.0 - 1e-7);
    }

    #[test]
    fn contradictory_scalar() {
        let mut p = SemidefiniteProgram::new();
        let x = p.add_var("x", VarShape::Symmetric(1));
        let mut a = BlockLmi::new("x", &[1]);
        a.add_var(0, 0, x, VarShape::Symmetric(1)).unwrap();
        let mut b = BlockLmi::new("-x - 1", &[1]);
        b.add_term(0, 0, &one(), x, &one(), -1.0).unwrap();
        b.add_constant(0, 0, &(-one())).unwrap();
        p.add_block(a);
        p.add_block(b);
        match solve_sdp(&p).unwrap() {
            SdpOutcome::Infeasible { margin_bound } => assert!(margin_bound < 0.0),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn scalar_lyapunov_block() {
        // [[X, aX],[aX, X]] ⪰ 0 with X > 0, a = 0.5
        let mut p = SemidefiniteProgram::new();
        let x = p.add_strict_var("X", 1);
        let mut b = BlockLmi::new("lyapunov", &[1, 1]);
        b.add_var(0, 0, x, VarShape::Symmetric(1)).unwrap();
        b.add_var(1, 1, x, VarShape::Symmetric(1)).unwrap();
        b.add_term(1, 0, &one(), x, &one(), 0.5).unwrap();
        p.add_block(b);
        let out = solve_sdp(&p).unwrap();
        let v = out.value(x).unwrap()[(0, 0)];
        assert!(v > 0.0);
        let f = p.blocks()[0].evaluate(&[DMatrix::from_element(1, 1, v)]).unwrap();
        assert!(min_eig_sym(&f) >= -1e-7);
    }

    #[test]
    fn matrix_lyapunov_unstable_is_infeasible() {
        // X > 0, X - AᵀXA ⪰ 0 with spectral radius 2
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 0.5]);
        let mut p = SemidefiniteProgram::new();
        let x = p.add_strict_var("X", 2);
        let mut b = BlockLmi::new("decrease", &[2]);
        b.add_var(0, 0, x, VarShape::Symmetric(2)).unwrap();
        b.add_term(0, 0, &a.transpose(), x, &a, -1.0).unwrap();
        b.add_constant(0, 0, &(-DMatrix::identity(2, 2))).unwrap();
        p.add_block(b);
        assert!(!solve_sdp(&p).unwrap().is_feasible());
    }

    #[test]
    fn matrix_lyapunov_stable_is_feasible() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.4, -0.2, 0.7]);
        let mut p = SemidefiniteProgram::new();
        let x = p.add_strict_var("X", 2);
        let mut b = BlockLmi::new("decrease", &[2]);
        b.add_var(0, 0, x, VarShape::Symmetric(2)).unwrap();
        b.add_term(0, 0, &a.transpose(), x, &a, -1.0).unwrap();
        b.add_constant(0, 0, &(-DMatrix::identity(2, 2) * 0.01)).unwrap();
        p.add_block(b);
        let out = solve_sdp(&p).unwrap();
        let xv = out.value(x).unwrap().clone();
        let res = &xv - a.transpose() * &xv * &a;
        assert!(min_eig_sym(&res) >= 0.01 - 1e-7);
    }

    #[test]
    fn objective_phase_pushes_trace() {
        // maximize trace X subject to X ⪯ 2I
        let mut p = SemidefiniteProgram::new();
        let x = p.add_strict_var("X", 2);
        let mut b = BlockLmi::new("upper", &[2]);
        b.add_term(0, 0, &DMatrix::identity(2, 2), x, &DMatrix::identity(2, 2), -1.0).unwrap();
        b.add_constant(0, 0, &(DMatrix::identity(2, 2) * 2.0)).unwrap();
        p.add_block(b);
        p.add_objective(x, DMatrix::identity(2, 2));
        let out = solve_sdp(&p).unwrap();
        match out {
            SdpOutcome::Feasible { objective, .. } => assert!(objective > 3.0 && objective < 4.0),
            _ => panic!("expected feasible"),
        }
    }

    #[test]
    fn full_variable_in_off_diagonal_block() {
        // [[1, y],[y, 1]] ⪰ 0 with y ≥ 0.5: feasible
        let mut p = SemidefiniteProgram::new();
        let y = p.add_var("y", VarShape::Full(1, 1));
        let mut b = BlockLmi::new("disk", &[1, 1]);
        b.add_constant(0, 0, &one()).unwrap();
        b.add_constant(1, 1, &one()).unwrap();
        b.add_term(1, 0, &one(), y, &one(), 1.0).unwrap();
        let mut lb = BlockLmi::new("y - 0.5", &[1]);
        lb.add_var(0, 0, y, VarShape::Full(1, 1)).unwrap();
        lb.add_constant(0, 0, &(-one() * 0.5)).unwrap();
        p.add_block(b);
        p.add_block(lb);
        let out = solve_sdp(&p).unwrap();
        let v = out.value(y).unwrap()[(0, 0)];
        assert!((0.5 - 1e-7..=1.0 + 1e-7).contains(&v));
    }

    #[test]
    fn mismatched_term_rejected() {
        let mut p = SemidefiniteProgram::new();
        let x = p.add_var("x", VarShape::Symmetric(2));
        let mut b = BlockLmi::new("bad", &[1]);
        b.add_term(0, 0, &one(), x, &one(), 1.0).unwrap();
        p.add_block(b);
        assert!(solve_sdp(&p).is_err());
    }

    #[test]
    fn symmetric_coordinates_roundtrip() {
        let s = VarShape::Symmetric(3);
        let m = s.assemble(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(m, DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]));
    }
}
