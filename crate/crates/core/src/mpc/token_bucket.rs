//! MPC for the token-bucket network.
//!
//! For a fixed transmission schedule the predicted `(x_p, u_s)` trajectory is
//! affine in the transmitted inputs, so each subproblem is a QP in those
//! inputs only. `β(N|k)` is fixed by the schedule, which selects the branch
//! of the terminal set: the phase polytope (or ellipsoid) if the bucket is
//! full enough, the origin otherwise.

use super::search::{search, ScheduleProblem};
use super::{MpcConfig, MpcMode, MpcSolution, SchedulePlan};
use crate::error::{Error, Result};
use crate::models::{PeriodicTerminalIngredients, RegionFamily, TokenBucketParams, TokenBucketState};
use crate::numerics::{quad_form, solve_qp, DenseMatrix, QpOutcome, QuadraticProgram, Vector};
use nalgebra::{DMatrix, DVector};
use std::time::Instant;

/// Bucket levels along a schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BucketTrajectory {
    /// `β_0, …, β_N`.
    Levels(Vec<i64>),
    /// First step whose transmission the bucket cannot pay for.
    Infeasible(usize),
}

impl BucketTrajectory {
    pub fn levels(&self) -> Option<&[i64]> {
        match self {
            BucketTrajectory::Levels(l) => Some(l),
            BucketTrajectory::Infeasible(_) => None,
        }
    }
}

pub fn bucket_trajectory(beta0: i64, schedule: &[usize], p: &TokenBucketParams) -> BucketTrajectory {
    if !(0..=p.capacity).contains(&beta0) {
        return BucketTrajectory::Infeasible(0);
    }
    let mut levels = Vec::with_capacity(schedule.len() + 1);
    levels.push(beta0);
    let mut beta = beta0;
    for (i, &g) in schedule.iter().enumerate() {
        let next = beta + p.g - if g != 0 { p.c } else { 0 };
        if next < 0 {
            return BucketTrajectory::Infeasible(i);
        }
        beta = next.min(p.capacity);
        levels.push(beta);
    }
    BucketTrajectory::Levels(levels)
}

/// Bucket-feasible transmission schedules of length `N` in lexicographic
/// order (`0` before `1` at each position).
#[derive(Debug, Clone)]
pub struct FeasibleSchedules<'a> {
    beta0: i64,
    n: usize,
    p: &'a TokenBucketParams,
    next: u64,
    end: u64,
}

pub fn feasible_schedules_tb(beta0: i64, n: usize, p: &TokenBucketParams) -> FeasibleSchedules<'_> {
    assert!(n < 64, "horizon too long to enumerate");
    FeasibleSchedules { beta0, n, p, next: 0, end: 1u64 << n }
}

impl Iterator for FeasibleSchedules<'_> {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        while self.next < self.end {
            let code = self.next;
            self.next += 1;
            // position 0 is the most significant bit
            let s: Vec<usize> = (0..self.n).map(|i| ((code >> (self.n - 1 - i)) & 1) as usize).collect();
            if let BucketTrajectory::Levels(_) = bucket_trajectory(self.beta0, &s, self.p) {
                return Some(s);
            }
        }
        None
    }
}

/// `z_i = F_i w + c_i` and `a_i = G_i w + d_i` for the decision vector `w`.
struct Condensed {
    z: Vec<(DenseMatrix, Vector)>,
    a: Vec<(DenseMatrix, Vector)>,
}

fn condense(z0: &Vector, schedule: &[usize], nw: usize, p: &TokenBucketParams) -> Condensed {
    let (n, m) = (p.n_p(), p.m_p());
    let mut f = DMatrix::zeros(n + m, nw);
    let mut c = z0.clone();
    let mut zs = vec![(f.clone(), c.clone())];
    let mut avs = Vec::with_capacity(schedule.len());
    let mut t = 0;
    for &g in schedule {
        let (ga, da) = if g != 0 {
            let mut sel = DMatrix::zeros(m, nw);
            sel.view_mut((0, t * m), (m, m)).fill_with_identity();
            t += 1;
            (sel, DVector::zeros(m))
        } else {
            (f.rows(n, m).into_owned(), c.rows(n, m).into_owned())
        };
        let fx = &p.a * f.rows(0, n) + &p.b * &ga;
        let cx = &p.a * c.rows(0, n) + &p.b * &da;
        f.rows_mut(0, n).copy_from(&fx);
        f.rows_mut(n, m).copy_from(&ga);
        c.rows_mut(0, n).copy_from(&cx);
        c.rows_mut(n, m).copy_from(&da);
        avs.push((ga, da));
        zs.push((f.clone(), c.clone()));
    }
    Condensed { z: zs, a: avs }
}

/// Adds `(Fw + c)ᵀW(Fw + c)` to `½wᵀHw + fᵀw + k`.
fn add_quadratic(h: &mut DenseMatrix, lin: &mut Vector, k: &mut f64, f: &DenseMatrix, c: &Vector, w: &DenseMatrix) {
    let wf = w * f;
    *h += f.transpose() * &wf * 2.0;
    *lin += wf.transpose() * c * 2.0;
    *k += quad_form(w, c);
}

/// Linear rows `A w ≤ b` with constant rows checked and dropped; `None` if a
/// constant row is violated.
fn push_rows(rows: &mut Vec<(Vec<f64>, f64)>, a: &DenseMatrix, b: &Vector, tol: f64) -> Option<()> {
    for i in 0..a.nrows() {
        let r = a.row(i);
        if r.amax() == 0.0 {
            if b[i] < -tol {
                return None;
            }
            continue;
        }
        rows.push((r.iter().copied().collect(), b[i]));
    }
    Some(())
}

fn stack(rows: &[(Vec<f64>, f64)], nw: usize) -> (DenseMatrix, Vector) {
    let a = DMatrix::from_fn(rows.len(), nw, |i, j| rows[i].0[j]);
    let b = DVector::from_fn(rows.len(), |i, _| rows[i].1);
    (a, b)
}

const CONSTRAINT_TOL: f64 = 1e-9;

/// Subproblem for a fixed schedule with the terminal ingredients of `phase`.
pub(crate) fn solve_schedule_phase(
    x: &TokenBucketState,
    schedule: &[usize],
    phase: usize,
    ing: &PeriodicTerminalIngredients,
    p: &TokenBucketParams,
) -> Result<SchedulePlan> {
    x.check(p)?;
    let levels = match bucket_trajectory(x.beta, schedule, p) {
        BucketTrajectory::Levels(l) => l,
        BucketTrajectory::Infeasible(_) => return Ok(SchedulePlan::infeasible(schedule.to_vec())),
    };
    let (n, m) = (p.n_p(), p.m_p());
    let nz = n + m;
    let horizon = schedule.len();
    let transmissions = schedule.iter().filter(|&&g| g != 0).count();
    let z0 = x.z();
    let joint = p.joint_set();
    if !joint.contains(&z0, CONSTRAINT_TOL)? {
        return Ok(SchedulePlan::infeasible(schedule.to_vec()));
    }

    let beta_n = levels[horizon];
    let in_region = beta_n >= p.threshold(phase);
    let image = match (&ing.region, in_region) {
        (RegionFamily::Polytopic(fam), true) => Some(fam.image_rows(phase)?),
        _ => None,
    };
    let nv = image.as_ref().map_or(0, |r| r.ineq_v.ncols());
    let nu = transmissions * m;
    let nw = nu + nv;
    let cd = condense(&z0, schedule, nw, p);

    let mut h = DMatrix::zeros(nw, nw);
    let mut lin = DVector::zeros(nw);
    let mut k0 = 0.0;
    for i in 0..horizon {
        let (f, c) = &cd.z[i];
        add_quadratic(&mut h, &mut lin, &mut k0, &f.rows(0, n).into_owned(), &c.rows(0, n).into_owned(), &p.q);
        let (g, d) = &cd.a[i];
        add_quadratic(&mut h, &mut lin, &mut k0, g, d, &p.r);
    }
    let (fn_, cn) = &cd.z[horizon];
    let pn = ing.cost_matrix(phase);
    if pn.shape() != (nz, nz) {
        return Err(Error::InvalidModel("terminal cost does not match the state dimension".into()));
    }
    add_quadratic(&mut h, &mut lin, &mut k0, fn_, cn, pn);

    let mut ineq = Vec::new();
    let mut eq = Vec::new();
    let joint_rows = joint.rows();
    let ones = DVector::from_element(joint_rows.nrows(), 1.0);
    for (f, c) in &cd.z[1..] {
        if push_rows(&mut ineq, &(joint_rows * f), &(&ones - joint_rows * c), CONSTRAINT_TOL).is_none() {
            return Ok(SchedulePlan::infeasible(schedule.to_vec()));
        }
    }
    let mut ellipsoid = None;
    let ok = if !in_region {
        // z(N) = 0
        let mut r = Some(());
        for i in 0..nz {
            if fn_.row(i).amax() == 0.0 {
                if cn[i].abs() > CONSTRAINT_TOL {
                    r = None;
                }
            } else {
                eq.push((fn_.row(i).iter().copied().collect(), -cn[i]));
            }
        }
        r
    } else {
        match (&ing.region, &image) {
            (RegionFamily::Polytopic(_), Some(img)) => {
                let e = &img.eq * fn_;
                let ec = &img.eq * cn;
                let mut sel_v = DMatrix::zeros(nv, nw);
                sel_v.view_mut((0, nu), (nv, nv)).fill_with_identity();
                let a = &img.ineq_y * fn_ + &img.ineq_v * &sel_v;
                let b = (&img.ineq_y * cn).map(|v| 1.0 - v);
                let mut r = push_rows(&mut ineq, &a, &b, CONSTRAINT_TOL);
                for i in 0..e.nrows() {
                    if e.row(i).amax() == 0.0 {
                        if ec[i].abs() > CONSTRAINT_TOL * (1.0 + cn.amax()) {
                            r = None;
                        }
                    } else {
                        eq.push((e.row(i).iter().copied().collect(), -ec[i]));
                    }
                }
                r
            }
            (RegionFamily::Ellipsoidal { alpha }, _) => {
                ellipsoid = Some(*alpha);
                Some(())
            }
            _ => Some(()),
        }
    };
    if ok.is_none() {
        return Ok(SchedulePlan::infeasible(schedule.to_vec()));
    }

    let (ai, bi) = stack(&ineq, nw);
    let (ae, be) = stack(&eq, nw);
    let qp = QuadraticProgram::new(h, lin).with_constant(k0).with_inequalities(ai, bi).with_equalities(ae, be);
    let w = match ellipsoid {
        None => match solve_qp(&qp)? {
            QpOutcome::Optimal { point, .. } => point,
            QpOutcome::Infeasible => return Ok(SchedulePlan::infeasible(schedule.to_vec())),
        },
        Some(alpha) => match solve_with_ellipsoid(&qp, fn_, cn, pn, alpha)? {
            Some(w) => w,
            None => return Ok(SchedulePlan::infeasible(schedule.to_vec())),
        },
    };

    let states: Vec<Vector> = cd.z.iter().map(|(f, c)| f * &w + c).collect();
    let inputs: Vec<Vector> = cd.a.iter().map(|(g, d)| g * &w + d).collect();
    let mut value = quad_form(pn, &states[horizon]);
    for i in 0..horizon {
        value += quad_form(&p.q, &states[i].rows(0, n).into_owned()) + quad_form(&p.r, &inputs[i]);
    }
    Ok(SchedulePlan { schedule: schedule.to_vec(), inputs, states, levels, value, feasible: true })
}

/// Adds `(F w + c)ᵀP(F w + c) ≤ α` to a QP by bisection on its multiplier.
fn solve_with_ellipsoid(
    qp: &QuadraticProgram,
    f: &DenseMatrix,
    c: &Vector,
    pm: &DenseMatrix,
    alpha: f64,
) -> Result<Option<Vector>> {
    let g = |w: &Vector| quad_form(pm, &(f * w + c)) - alpha;
    let mut pf = DMatrix::zeros(qp.num_vars(), qp.num_vars());
    let mut pl = DVector::zeros(qp.num_vars());
    let mut pk = 0.0;
    add_quadratic(&mut pf, &mut pl, &mut pk, f, c, pm);
    let with_mu = |mu: f64| -> Result<Option<Vector>> {
        let mut q = qp.clone();
        q.hessian += &pf * mu;
        q.linear += &pl * mu;
        Ok(solve_qp(&q)?.point().cloned())
    };
    let tol = 1e-10 * (1.0 + alpha);
    let Some(w0) = with_mu(0.0)? else {
        return Ok(None);
    };
    if g(&w0) <= tol {
        return Ok(Some(w0));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut w_hi = None;
    while hi < 1e12 {
        let w = with_mu(hi)?.ok_or_else(|| Error::Solver("QP lost feasibility while penalizing".into()))?;
        if g(&w) <= tol {
            w_hi = Some(w);
            break;
        }
        lo = hi;
        hi *= 4.0;
    }
    let Some(mut w_hi) = w_hi else {
        return Ok(None);
    };
    for _ in 0..100 {
        if hi - lo <= 1e-12 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let w = with_mu(mid)?.ok_or_else(|| Error::Solver("QP lost feasibility while penalizing".into()))?;
        if g(&w) <= tol {
            hi = mid;
            w_hi = w;
        } else {
            lo = mid;
        }
    }
    Ok(Some(w_hi))
}

/// Unconstrained minimum of the stage costs along a schedule prefix.
fn prefix_bound(x: &TokenBucketState, prefix: &[usize], p: &TokenBucketParams) -> f64 {
    let n = p.n_p();
    let nw = prefix.iter().filter(|&&g| g != 0).count() * p.m_p();
    let cd = condense(&x.z(), prefix, nw, p);
    let mut h = DMatrix::zeros(nw, nw);
    let mut lin = DVector::zeros(nw);
    let mut k0 = 0.0;
    for i in 0..prefix.len() {
        let (f, c) = &cd.z[i];
        add_quadratic(&mut h, &mut lin, &mut k0, &f.rows(0, n).into_owned(), &c.rows(0, n).into_owned(), &p.q);
        let (g, d) = &cd.a[i];
        add_quadratic(&mut h, &mut lin, &mut k0, g, d, &p.r);
    }
    if nw == 0 {
        return k0;
    }
    match h.clone().cholesky() {
        Some(ch) => {
            let w = ch.solve(&(-&lin));
            // slightly loosened against rounding
            (k0 + 0.5 * lin.dot(&w)).max(0.0) * (1.0 - 1e-12)
        }
        None => 0.0,
    }
}

struct TbProblem<'a> {
    x: &'a TokenBucketState,
    phase: usize,
    horizon: usize,
    ing: &'a PeriodicTerminalIngredients,
    p: &'a TokenBucketParams,
}

impl ScheduleProblem for TbProblem<'_> {
    fn arity(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn prefix_feasible(&self, prefix: &[usize]) -> bool {
        matches!(bucket_trajectory(self.x.beta, prefix, self.p), BucketTrajectory::Levels(_))
    }

    fn lower_bound(&self, prefix: &[usize]) -> Result<f64> {
        Ok(prefix_bound(self.x, prefix, self.p))
    }

    fn evaluate(&self, schedule: &[usize]) -> Result<SchedulePlan> {
        solve_schedule_phase(self.x, schedule, self.phase, self.ing, self.p)
    }
}

fn check_setup(cfg: &MpcConfig, ing: &PeriodicTerminalIngredients, p: &TokenBucketParams) -> Result<usize> {
    let mm = p.period();
    cfg.validate(mm)?;
    if ing.period != mm {
        return Err(Error::InvalidModel(format!(
            "ingredients have period {} but the bucket gives M = {mm}",
            ing.period
        )));
    }
    Ok(mm)
}

/// Subproblem for a fixed schedule at time `k`.
pub fn solve_fixed_schedule_tb(
    x: &TokenBucketState,
    schedule: &[usize],
    k: usize,
    cfg: &MpcConfig,
    ing: &PeriodicTerminalIngredients,
    p: &TokenBucketParams,
) -> Result<SchedulePlan> {
    let mm = check_setup(cfg, ing, p)?;
    if schedule.len() != cfg.horizon || schedule.iter().any(|&g| g > 1) {
        return Err(Error::Config(format!("schedule must list {} entries in {{0, 1}}", cfg.horizon)));
    }
    solve_schedule_phase(x, schedule, cfg.phase(k, mm), ing, p)
}

/// The shifted plan with the terminal controller's decision appended.
fn shifted_schedule(prev: &SchedulePlan, prev_phase: usize, p: &TokenBucketParams) -> Option<Vec<usize>> {
    if !prev.feasible || prev.schedule.is_empty() {
        return None;
    }
    let beta_n = *prev.levels.last()?;
    let send = prev_phase == 0 && beta_n >= p.threshold(0);
    let mut s = prev.schedule[1..].to_vec();
    s.push(usize::from(send));
    Some(s)
}

fn search_phase(
    x: &TokenBucketState,
    phase: usize,
    cfg: &MpcConfig,
    ing: &PeriodicTerminalIngredients,
    p: &TokenBucketParams,
    incumbent: Option<&[usize]>,
    k: usize,
) -> Result<MpcSolution> {
    let start = Instant::now();
    let problem = TbProblem { x, phase, horizon: cfg.horizon, ing, p };
    let res = search(&problem, cfg.schedule_search, cfg.tie_tolerance, incumbent)?;
    let elapsed = start.elapsed().as_secs_f64();
    let best = res.best.ok_or(Error::InfeasibleProblem(k))?;
    Ok(MpcSolution::from_plan(best, elapsed, res.nodes))
}

/// `P(x(k), k)` with the time-varying terminal ingredients. `prev` is the
/// optimal plan of time `k − 1`, used as warm start when enabled.
pub fn solve_tv_mpc_tb(
    x: &TokenBucketState,
    k: usize,
    cfg: &MpcConfig,
    ing: &PeriodicTerminalIngredients,
    p: &TokenBucketParams,
    prev: Option<&SchedulePlan>,
) -> Result<MpcSolution> {
    let mm = check_setup(cfg, ing, p)?;
    let phase = cfg.phase(k, mm);
    let incumbent =
        if cfg.warm_start { prev.and_then(|pl| shifted_schedule(pl, (phase + mm - 1) % mm, p)) } else { None };
    search_phase(x, phase, cfg, ing, p, incumbent.as_deref(), k)
}

/// Multi-step baseline: solves against `S_0`, `F_0` at `k ≡ 0 (mod M)` and
/// otherwise replays `stored`, the plan of the last solve.
pub fn solve_multistep_mpc_tb(
    x: &TokenBucketState,
    k: usize,
    cfg: &MpcConfig,
    ing: &PeriodicTerminalIngredients,
    p: &TokenBucketParams,
    stored: Option<&SchedulePlan>,
) -> Result<MpcSolution> {
    let mm = check_setup(cfg, ing, p)?;
    if cfg.mode != MpcMode::MultiStep {
        return Err(Error::Config("multi-step solve called with a time-varying configuration".into()));
    }
    let r = k % mm;
    if r == 0 {
        return search_phase(x, 0, cfg, ing, p, None, k);
    }
    let plan = stored.ok_or_else(|| Error::Config("multi-step replay needs the plan of the last solve".into()))?;
    if !plan.feasible || plan.schedule.len() <= r {
        return Err(Error::Config("stored multi-step plan is too short".into()));
    }
    let n = p.n_p();
    let horizon = plan.schedule.len();
    let mut value = ing.terminal_cost(0, &plan.states[horizon]);
    for i in r..horizon {
        value += quad_form(&p.q, &plan.states[i].rows(0, n).into_owned()) + quad_form(&p.r, &plan.inputs[i]);
    }
    Ok(MpcSolution {
        input: plan.inputs[r].clone(),
        decision: plan.schedule[r],
        value,
        plan: plan.clone(),
        solve_seconds: 0.0,
        nodes: 0,
    })
}

/// Stateful controller that keeps the previous plan for warm starts and
/// multi-step replay.
#[derive(Debug, Clone)]
pub struct TbController {
    pub cfg: MpcConfig,
    pub ingredients: PeriodicTerminalIngredients,
    pub params: TokenBucketParams,
    last: Option<SchedulePlan>,
}

impl TbController {
    pub fn new(cfg: MpcConfig, ingredients: PeriodicTerminalIngredients, params: TokenBucketParams) -> Result<Self> {
        check_setup(&cfg, &ingredients, &params)?;
        ingredients.validate()?;
        Ok(TbController { cfg, ingredients, params, last: None })
    }

    pub fn reset(&mut self) {
        self.last = None;
    }

    pub fn last_plan(&self) -> Option<&SchedulePlan> {
        self.last.as_ref()
    }

    pub fn step(&mut self, x: &TokenBucketState, k: usize) -> Result<MpcSolution> {
        let sol = match self.cfg.mode {
            MpcMode::TimeVarying => {
                solve_tv_mpc_tb(x, k, &self.cfg, &self.ingredients, &self.params, self.last.as_ref())?
            }
            MpcMode::MultiStep => {
                solve_multistep_mpc_tb(x, k, &self.cfg, &self.ingredients, &self.params, self.last.as_ref())?
            }
        };
        self.last = Some(sol.plan.clone());
        Ok(sol)
    }
}
