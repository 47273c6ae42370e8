//! Instance generators, independent oracles and invariant checks shared by
//! the property suites and the acceptance target.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tvmpc::models::{
    act_omega, act_pi, act_stage_cost, next_bucket_level, tb_stage_cost, tb_step, tb_storage, tb_terminal_controller,
    tb_terminal_membership, ActuatorParams, PeriodicTerminalIngredients, RegionFamily, TerminalGain, TokenBucketInput,
    TokenBucketParams, TokenBucketState,
};
use tvmpc::mpc::{
    solve_fixed_schedule_act, solve_fixed_schedule_tb, solve_multistep_mpc_tb, solve_tv_mpc_act, solve_tv_mpc_tb,
    MpcConfig, MpcMode, MpcSolution, ScheduleSearch, TbController,
};
use tvmpc::numerics::{
    min_eigenvalue, solve_lp, solve_qp, solve_sdp, zoh_discretize, LinearProgram, LpOutcome, QpOutcome,
    QuadraticProgram, SdpOutcome, SymmetricMatrix,
};
use tvmpc::polytope::{image_contained, max_invariant_polytope, PeriodicPolytopeFamily, Polytope};
use tvmpc::sim::{run_closed_loop, ClosedLoopTrace, Controller, SetupKind, SimState, TraceRow};
use tvmpc::synthesis::{
    build_act_lmis, build_tb_lmis, ellipsoid_excess, synthesize_act, synthesize_tb, verify_act, verify_tb, ModelParams,
    RegionMode, Synthesis, SynthesisOptions,
};
use tvmpc::Error;

pub type Mat = DMatrix<f64>;
pub type Vecf = DVector<f64>;
pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err(format!($($arg)*));
        }
    };
}

fn e2s(e: Error) -> String {
    e.to_string()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Mat {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vecf {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

/// Spectral radius. The Schur iteration is bounded (the unbounded one can
/// stall on defective matrices); Gelfand's formula `‖Φ^{2^k}‖^{2^{−k}}` is
/// the fallback.
pub fn spectral_radius(m: &Mat) -> f64 {
    if let Some(s) = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 2_000) {
        return s.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    }
    let mut p = m.clone();
    let mut log = 0.0;
    let mut pow = 1.0;
    for _ in 0..40 {
        let s = p.norm();
        if s == 0.0 {
            return 0.0;
        }
        p /= s;
        log += s.ln() / pow;
        p = &p * &p;
        pow *= 2.0;
    }
    (log + p.norm().ln() / pow).exp()
}

/// Smallest singular value of the controllability matrix.
pub fn controllability(a: &Mat, b: &Mat) -> f64 {
    let n = a.nrows();
    let m = b.ncols();
    let mut c = DMatrix::zeros(n, n * m);
    let mut blk = b.clone();
    for i in 0..n {
        c.view_mut((0, i * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    c.singular_values().min()
}

// ---------------------------------------------------------------- instances

pub fn tb_params(a: Mat, b: Mat, g: i64, c: i64, cap: i64, x_bound: f64, u_bound: f64) -> TokenBucketParams {
    let (n, m) = (a.nrows(), b.ncols());
    TokenBucketParams::new(
        a,
        b,
        DMatrix::identity(n, n),
        DMatrix::identity(m, m),
        g,
        c,
        cap,
        Polytope::symmetric_box(&vec![x_bound; n]).unwrap(),
        Polytope::symmetric_box(&vec![u_bound; m]).unwrap(),
    )
    .unwrap()
}

/// A controllable plant with entries in `[−s, s]`.
pub fn random_plant(rng: &mut ChaCha8Rng, n: usize, m: usize, s: f64) -> (Mat, Mat) {
    loop {
        let a = uniform(rng, n, n, -s, s);
        let b = uniform(rng, n, m, -1.0, 1.0);
        if controllability(&a, &b) > 0.1 {
            return (a, b);
        }
    }
}

/// A token-bucket instance whose synthesis succeeds; polytopic or
/// ellipsoidal regions alternate with the seed.
pub fn random_tb_instance(seed: u64) -> (TokenBucketParams, Synthesis) {
    let mut r = rng(seed);
    let mode = if seed.is_multiple_of(2) { RegionMode::Polytopic } else { RegionMode::Ellipsoidal };
    for _ in 0..200 {
        let n = r.random_range(1..=2);
        let c = r.random_range(1..=3);
        let cap = c + r.random_range(0..=2);
        let (a, b) = random_plant(&mut r, n, 1, 1.1);
        let p = tb_params(a, b, 1, c, cap, 4.0, 2.0);
        if let Ok(s) = synthesize_tb(&p, mode, &SynthesisOptions::default()) {
            return (p, s);
        }
    }
    panic!("no synthesizable token-bucket instance for seed {seed}");
}

pub fn random_act_instance(seed: u64) -> (ActuatorParams, Synthesis) {
    let mut r = rng(seed);
    for _ in 0..200 {
        let n = r.random_range(1..=3);
        let m = r.random_range(2..=3);
        let (a, b) = random_plant(&mut r, n, m, 1.1);
        let rw = uniform_vec(&mut r, m, 0.2, 2.0);
        let p = ActuatorParams::new(
            a,
            b,
            DMatrix::identity(n, n),
            DMatrix::from_diagonal(&rw),
            vec![1; m],
            (0..m).collect(),
        )
        .unwrap();
        if let Ok(s) = synthesize_act(&p, &SynthesisOptions::default()) {
            return (p, s);
        }
    }
    panic!("no synthesizable actuator instance for seed {seed}");
}

/// A bucket state with `x_p` in half the state box, `u_s` in half the input box.
pub fn random_tb_state(r: &mut ChaCha8Rng, p: &TokenBucketParams) -> TokenBucketState {
    TokenBucketState::new(
        uniform_vec(r, p.n_p(), -1.5, 1.5),
        uniform_vec(r, p.m_p(), -0.8, 0.8),
        r.random_range(0..=p.capacity),
    )
}

// ------------------------------------------------------------- the oracles

/// One-period transition `A′^{M−1}·A″(K)`.
pub fn monodromy(p: &TokenBucketParams, k: &Mat) -> Mat {
    let a_p = p.a_prime();
    let mut phi = p.a_double_prime(k);
    for _ in 1..p.period() {
        phi = &a_p * phi;
    }
    phi
}

/// `min_K ρ(A′^{M−1}A″(K))` by a grid over the gain entries followed by
/// compass search from the best grid points.
///
/// For a fixed `K` the periodic chain of decrease inequalities admits
/// positive definite `P_j` with strict decrease iff the one-period map is
/// Schur (sum the chain over one period, then use the discrete Lyapunov
/// theorem; conversely the periodic Lyapunov series with `Q + εI` solves it).
pub fn min_monodromy_radius(p: &TokenBucketParams) -> f64 {
    let (m, nz) = (p.m_p(), p.n_p() + p.m_p());
    let d = m * nz;
    let rho = |v: &[f64]| spectral_radius(&monodromy(p, &DMatrix::from_row_slice(m, nz, v)));
    let pts: usize = match d {
        0..=2 => 81,
        3 => 41,
        _ => 13,
    };
    let lim = 8.0;
    let step = 2.0 * lim / (pts - 1) as f64;
    let mut best: Vec<(f64, Vec<f64>)> = Vec::new();
    let total = pts.pow(d as u32);
    for idx in 0..total {
        let mut rem = idx;
        let v: Vec<f64> = (0..d)
            .map(|_| {
                let i = rem % pts;
                rem /= pts;
                -lim + step * i as f64
            })
            .collect();
        let val = rho(&v);
        best.push((val, v));
        if best.len() > 64 {
            best.sort_by(|a, b| a.0.total_cmp(&b.0));
            best.truncate(8);
        }
    }
    best.sort_by(|a, b| a.0.total_cmp(&b.0));
    best.truncate(8);
    let mut overall = f64::INFINITY;
    for (mut val, mut v) in best {
        let mut h = step;
        let mut iters = 0;
        while h > 1e-7 && iters < 20_000 {
            iters += 1;
            let mut moved = false;
            for i in 0..d {
                for s in [1.0, -1.0] {
                    let mut w = v.clone();
                    w[i] += s * h;
                    let f = rho(&w);
                    if f < val {
                        val = f;
                        v = w;
                        moved = true;
                    }
                }
            }
            if !moved {
                h *= 0.5;
            }
        }
        overall = overall.min(val);
    }
    overall
}

/// Feasibility of the token-bucket decrease LMIs as reported by the SDP.
pub fn sdp_feasible(p: &TokenBucketParams) -> bool {
    let prob = build_tb_lmis(p, None).unwrap();
    solve_sdp(&prob.sdp).unwrap().is_feasible()
}

/// Random oracle instance: scalar or two-state plant, `M ∈ {1,2,3}`, kept
/// only if the oracle radius is at least `gap` away from 1.
pub fn oracle_instance(seed: u64, two_state: bool, period: i64, spread: f64, gap: f64) -> (TokenBucketParams, f64) {
    let mut r = rng(seed);
    loop {
        let n = if two_state { 2 } else { 1 };
        let a = uniform(&mut r, n, n, -spread, spread);
        let b = DMatrix::from_fn(n, 1, |_, _| {
            let mag: f64 = r.random_range(0.4..1.5);
            if r.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        });
        if controllability(&a, &b) < 0.1 {
            continue;
        }
        let p = tb_params(a, b, 1, period, period + 1, 10.0, 10.0);
        let rho = min_monodromy_radius(&p);
        if (rho - 1.0).abs() >= gap {
            return (p, rho);
        }
    }
}

/// Two-state plant `A = r·R(π/M)`: `(A, B)` is controllable, but `A^M = −r^M I`
/// leaves the pair lifted over one hold period uncontrollable, so
/// `ρ* ≥ r^M` and `r > 1` makes the decrease LMIs infeasible.
pub fn rotation_instance(seed: u64, period: i64, unstable: bool) -> (TokenBucketParams, f64) {
    let mut r = rng(seed);
    let radius: f64 = if unstable { r.random_range(1.1..1.6) } else { r.random_range(0.5..0.9) };
    let th = std::f64::consts::PI / period as f64;
    let a = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]) * radius;
    let b = uniform(&mut r, 2, 1, 0.4, 1.2);
    let p = tb_params(a, b, 1, period, period + 1, 10.0, 10.0);
    let rho = min_monodromy_radius(&p);
    (p, rho)
}

/// Vertices of `{z : A z ≤ b}` in two dimensions by pairwise intersection.
pub fn vertices_2d(a: &Mat, b: &Vecf, tol: f64) -> Vec<Vecf> {
    let m = a.nrows();
    let mut out = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            let s = DMatrix::from_row_slice(2, 2, &[a[(i, 0)], a[(i, 1)], a[(j, 0)], a[(j, 1)]]);
            if s.determinant().abs() < 1e-12 {
                continue;
            }
            let Some(v) = s.lu().solve(&DVector::from_row_slice(&[b[i], b[j]])) else { continue };
            if (a * &v - b).max() <= tol {
                out.push(v);
            }
        }
    }
    out
}

/// Random 2-variable constraint set: a box `|z| ≤ 5` plus `extra` random
/// half-planes whose offsets may make the set empty.
pub fn random_2d_rows(r: &mut ChaCha8Rng, extra: usize) -> (Mat, Vecf) {
    let m = 4 + extra;
    let mut a = DMatrix::zeros(m, 2);
    let mut b = DVector::zeros(m);
    for (i, (x, y)) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)].into_iter().enumerate() {
        a[(i, 0)] = x;
        a[(i, 1)] = y;
        b[i] = 5.0;
    }
    for i in 4..m {
        let th: f64 = r.random_range(0.0..std::f64::consts::TAU);
        a[(i, 0)] = th.cos();
        a[(i, 1)] = th.sin();
        b[i] = r.random_range(-1.5..3.0);
    }
    (a, b)
}

// ------------------------------------------------------- numerics checks

pub fn check_lp_vertex_oracle(seed: u64) -> Check {
    let mut r = rng(seed);
    let extra = r.random_range(0..6);
    let (a, b) = random_2d_rows(&mut r, extra);
    let c = uniform_vec(&mut r, 2, -1.0, 1.0);
    let verts = vertices_2d(&a, &b, 1e-9);
    let out = solve_lp(&LinearProgram::maximize(c.clone(), a, b)).map_err(e2s)?;
    match (verts.is_empty(), out) {
        (true, LpOutcome::Infeasible) => Ok(()),
        (false, LpOutcome::Optimal { value, .. }) => {
            let best = verts.iter().map(|v| c.dot(v)).fold(f64::NEG_INFINITY, f64::max);
            ensure!((best - value).abs() <= 1e-6, "LP value {value} vs vertex oracle {best}");
            Ok(())
        }
        (empty, o) => Err(format!("LP outcome {o:?} but oracle set empty = {empty}")),
    }
}

pub fn check_qp_oracle(seed: u64) -> Check {
    let mut r = rng(seed);
    let extra = r.random_range(0..6);
    let (a, b) = random_2d_rows(&mut r, extra);
    let h = if r.random_bool(0.3) {
        // rank one: semidefinite
        let v = uniform_vec(&mut r, 2, -1.0, 1.0);
        &v * v.transpose()
    } else {
        let l = uniform(&mut r, 2, 2, -1.0, 1.0);
        &l * l.transpose() + DMatrix::identity(2, 2) * 0.1
    };
    let f = uniform_vec(&mut r, 2, -2.0, 2.0);
    let obj = |z: &Vecf| 0.5 * z.dot(&(&h * z)) + f.dot(z);
    let feasible = |z: &Vecf| (&a * z - &b).max() <= 1e-9;

    // KKT candidates: interior stationary points, stationary points on each
    // edge line, and vertices
    let mut cands: Vec<Vecf> = vertices_2d(&a, &b, 1e-9);
    let svd = h.clone().svd(true, true);
    if let Ok(z) = svd.solve(&(-&f), 1e-12) {
        if (&h * &z + &f).norm() < 1e-9 {
            cands.push(z);
        }
    }
    for i in 0..a.nrows() {
        let n = DVector::from_row_slice(&[a[(i, 0)], a[(i, 1)]]);
        let z0 = &n * (b[i] / n.norm_squared());
        let d = DVector::from_row_slice(&[-n[1], n[0]]);
        let curv = d.dot(&(&h * &d));
        if curv > 1e-12 {
            let t = -d.dot(&(&h * &z0 + &f)) / curv;
            cands.push(z0 + d * t);
        }
    }
    let best = cands.iter().filter(|z| feasible(z)).map(obj).fold(f64::INFINITY, f64::min);
    let qp = QuadraticProgram::new(h.clone(), f.clone()).with_inequalities(a.clone(), b.clone());
    match solve_qp(&qp).map_err(e2s)? {
        QpOutcome::Infeasible => {
            ensure!(best.is_infinite(), "QP reported infeasible but oracle found {best}");
        }
        QpOutcome::Optimal { point, value } => {
            ensure!(best.is_finite(), "QP found {value} but oracle set is empty");
            ensure!(feasible(&point) || (&a * &point - &b).max() <= 1e-7, "QP point infeasible");
            ensure!((best - value).abs() <= 1e-6 * (1.0 + best.abs()), "QP value {value} vs oracle {best}");
        }
    }
    Ok(())
}

pub fn check_zoh_doubling(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.random_range(1..=3);
    let m = uniform(&mut r, n, n, -1.0, 1.0);
    let skew = uniform(&mut r, n, n, -1.0, 1.0);
    let ac = -(&m * m.transpose()) - DMatrix::identity(n, n) * 0.1 + (&skew - skew.transpose());
    let bc = uniform(&mut r, n, 1, -1.0, 1.0);
    let h: f64 = r.random_range(0.01..0.5);
    let (a1, _) = zoh_discretize(&ac, &bc, h).map_err(e2s)?;
    let (a2, _) = zoh_discretize(&ac, &bc, 2.0 * h).map_err(e2s)?;
    let err = (&a1 * &a1 - &a2).amax();
    ensure!(err <= 1e-8, "A(h)² − A(2h) = {err:e}");
    Ok(())
}

/// Re-evaluates every block of a solved SDP and checks the strict variables.
pub fn check_sdp_solution(p: &TokenBucketParams) -> Check {
    let prob = build_tb_lmis(p, None).map_err(e2s)?;
    let SdpOutcome::Feasible { values, .. } = solve_sdp(&prob.sdp).map_err(e2s)? else {
        return Ok(());
    };
    for b in prob.sdp.blocks() {
        let m = b.evaluate(&values).map_err(e2s)?;
        let e = min_eigenvalue(&SymmetricMatrix::symmetrize(m)).map_err(e2s)?;
        ensure!(e >= -1e-6, "block eigenvalue {e:e}");
    }
    for x in &prob.x {
        let e = min_eigenvalue(&SymmetricMatrix::symmetrize(values[x.index()].clone())).map_err(e2s)?;
        ensure!(e > 0.0, "strict variable not positive definite ({e:e})");
    }
    Ok(())
}

// ------------------------------------------------------- polytope checks

pub fn check_invariant_fixed_point(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.random_range(1..=2);
    let mut a = uniform(&mut r, n, n, -1.0, 1.0);
    let rho = spectral_radius(&a);
    if rho > 0.9 {
        a *= 0.9 / rho;
    }
    let bounds: Vec<f64> = (0..n).map(|_| r.random_range(0.5..3.0)).collect();
    let x = Polytope::symmetric_box(&bounds).map_err(e2s)?;
    let p = max_invariant_polytope(&a, &x, 500).map_err(e2s)?;
    ensure!(p.contains(&DVector::zeros(n), 0.0).map_err(e2s)?, "origin not in invariant set");
    ensure!(image_contained(&a, &p, &p).map_err(e2s)?, "A·P ⊄ P: one more iteration would cut");
    ensure!(image_contained(&DMatrix::identity(n, n), &p, &x).map_err(e2s)?, "invariant set leaves the constraint set");
    Ok(())
}

/// Points of `Z_j`: images of base vertices maximizing random directions.
pub fn family_samples(fam: &PeriodicPolytopeFamily, j: usize, count: usize, r: &mut ChaCha8Rng) -> Vec<Vecf> {
    let base = &fam.base;
    let n = base.dim();
    let mut out = vec![DVector::zeros(n)];
    for _ in 0..count {
        let d = uniform_vec(r, n, -1.0, 1.0);
        let lp = LinearProgram::maximize(d, base.rows().clone(), DVector::from_element(base.num_rows(), 1.0));
        if let Ok(LpOutcome::Optimal { point, .. }) = solve_lp(&lp) {
            out.push(fam.map(j) * point);
        }
    }
    out
}

/// The periodic inclusions, closure and containment of a polytopic family.
pub fn check_family(p: &TokenBucketParams, ing: &PeriodicTerminalIngredients, seed: u64) -> Check {
    let RegionFamily::Polytopic(fam) = &ing.region else {
        return Ok(());
    };
    let k = ing.shared_gain().ok_or("no shared gain")?;
    let (a_dd, a_p) = (p.a_double_prime(k), p.a_prime());
    let mm = fam.period();
    let excess = fam.inclusion_excess(&a_dd, &a_p).map_err(e2s)?;
    ensure!(excess.iter().all(|e| *e <= 1e-8), "inclusion excess {excess:?}");
    // literal inclusions where both sets have an H-representation
    for j in 0..mm {
        let a = if j == 0 { &a_dd } else { &a_p };
        if let (Some(src), Some(dst)) = (fam.h_rep(j).map_err(e2s)?, fam.h_rep(j + 1).map_err(e2s)?) {
            ensure!(image_contained(a, &src, &dst).map_err(e2s)?, "image of Z_{j} not in Z_{}", (j + 1) % mm);
        }
    }
    let joint = p.joint_set();
    let cont = fam.containment_excess(&joint).map_err(e2s)?;
    ensure!(cont.iter().all(|e| *e <= 1e-8), "containment excess {cont:?}");
    let mut r = rng(seed);
    for j in 0..mm {
        let a = if j == 0 { &a_dd } else { &a_p };
        for z in family_samples(fam, j, 12, &mut r) {
            ensure!(fam.contains(j, &z, 1e-9).map_err(e2s)?, "sample not in its own Z_{j}");
            ensure!(joint.contains(&z, 1e-8).map_err(e2s)?, "Z_{j} sample violates constraints");
            ensure!(
                fam.contains(j + 1, &(a * &z), 1e-8).map_err(e2s)?,
                "image of a Z_{j} vertex not in Z_{}",
                (j + 1) % mm
            );
        }
    }
    Ok(())
}

// ----------------------------------------------------------- model checks

pub fn check_bucket_exhaustive(g: i64, c: i64, cap: i64) -> Check {
    let one = DMatrix::from_element(1, 1, 1.0);
    let p = tb_params(one.clone(), one, g, c, cap, 1.0, 1.0);
    for beta in 0..=cap {
        for transmit in [false, true] {
            let expected = beta + g - if transmit { c } else { 0 };
            match next_bucket_level(beta, transmit, &p) {
                Ok(v) => {
                    ensure!(expected >= 0, "β={beta}, γ={transmit}: accepted a draining transmission");
                    ensure!((0..=cap).contains(&v), "β={beta}, γ={transmit}: level {v} out of range");
                    ensure!(v == expected.min(cap), "β={beta}, γ={transmit}: level {v}");
                }
                Err(_) => ensure!(expected < 0, "β={beta}, γ={transmit}: rejected a valid step"),
            }
        }
    }
    Ok(())
}

/// Stage cost sign and zero set, plus the dissipation inequality with
/// storage `‖u_s‖²_R`.
pub fn check_stage_cost_and_dissipation(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.random_range(1..=3);
    let m = r.random_range(1..=2);
    let (a, b) = random_plant(&mut r, n, m, 1.5);
    let mut p = tb_params(a, b, 1, 2, 3, 10.0, 10.0);
    let lq = uniform(&mut r, n, n, -1.0, 1.0);
    p.q = &lq * lq.transpose() + DMatrix::identity(n, n) * 0.05;
    let lr = uniform(&mut r, m, m, -1.0, 1.0);
    p.r = &lr * lr.transpose() + DMatrix::identity(m, m) * 0.05;
    let zero_or = |r: &mut ChaCha8Rng, k: usize| {
        if r.random_bool(0.3) {
            DVector::zeros(k)
        } else {
            uniform_vec(r, k, -2.0, 2.0)
        }
    };
    let s = TokenBucketState::new(zero_or(&mut r, n), zero_or(&mut r, m), 3);
    for u in [TokenBucketInput::hold(m), TokenBucketInput::send(zero_or(&mut r, m))] {
        let l = tb_stage_cost(&s, &u, &p);
        let effective = u.applied(&s);
        let at_zero = s.xp.amax() == 0.0 && effective.amax() == 0.0;
        ensure!(l >= 0.0, "negative stage cost {l}");
        ensure!((l == 0.0) == at_zero, "stage cost {l} but zero point = {at_zero}");
        let next = tb_step(&s, &u, &p).map_err(e2s)?;
        let slack = l + tb_storage(&s, &p) - tb_storage(&next, &p);
        ensure!(slack >= -1e-12 * (1.0 + l), "dissipation slack {slack:e}");
        if slack.abs() <= 1e-14 {
            ensure!(s.xp.amax() == 0.0, "zero dissipation slack away from x_p = 0");
        }
    }
    Ok(())
}

/// `(S_j, κ_j)` maps into `S_{j+1}`: exhaustive over `β`, sampled states.
pub fn check_terminal_invariance(p: &TokenBucketParams, ing: &PeriodicTerminalIngredients, seed: u64) -> Check {
    let mm = p.period();
    let mut r = rng(seed);
    let (n, m) = (p.n_p(), p.m_p());
    for j in 0..mm {
        let samples: Vec<Vecf> = match &ing.region {
            RegionFamily::Polytopic(fam) => family_samples(fam, j, 6, &mut r),
            RegionFamily::Ellipsoidal { alpha } => {
                let pj = ing.cost_matrix(j);
                let mut v = vec![DVector::zeros(n + m)];
                for _ in 0..6 {
                    let d = uniform_vec(&mut r, n + m, -1.0, 1.0);
                    let s = (alpha / d.dot(&(pj * &d))).sqrt() * (1.0 - 1e-9);
                    v.push(d * s);
                }
                v
            }
            RegionFamily::Unbounded => return Err("token-bucket region must be bounded".into()),
        };
        for beta in 0..=p.capacity {
            for z in &samples {
                let s = TokenBucketState::from_z(z, n, beta);
                if !tb_terminal_membership(&s, j, ing, p).map_err(e2s)? {
                    // only rest states belong to S_j below the threshold
                    ensure!(beta < p.threshold(j), "sample of Z_{j} rejected at β = {beta}");
                    continue;
                }
                let u = tb_terminal_controller(&s, j, ing, p).map_err(e2s)?;
                let next = tb_step(&s, &u, p).map_err(e2s)?;
                ensure!(
                    tb_terminal_membership(&next, j + 1, ing, p).map_err(e2s)?,
                    "κ_{j} leaves S_{} from β = {beta}",
                    (j + 1) % mm
                );
                // and the terminal decrease along the way
                let l = tb_stage_cost(&s, &u, p);
                let drop = ing.terminal_cost(j + 1, &next.z()) - ing.terminal_cost(j, &s.z()) + l;
                ensure!(drop <= 1e-9 * (1.0 + l), "terminal decrease violated by {drop:e}");
            }
        }
    }
    Ok(())
}

pub fn check_actuator_algebra(seed: u64) -> Check {
    let mut r = rng(seed);
    let groups = r.random_range(1..=4);
    let widths: Vec<usize> = (0..groups).map(|_| r.random_range(1..=2)).collect();
    let total: usize = widths.iter().sum();
    let mut sum = DMatrix::zeros(total, total);
    for s in 0..groups {
        let om = act_omega(s, &widths).map_err(e2s)?;
        let pi = act_pi(s, &widths).map_err(e2s)?;
        ensure!(&om * &om == om, "Ω_{s} is not idempotent");
        ensure!(om == om.transpose(), "Ω_{s} is not symmetric");
        ensure!(&pi * pi.transpose() == DMatrix::identity(widths[s], widths[s]), "Π_{s}Π_{s}ᵀ ≠ I");
        sum += om;
    }
    ensure!(sum == DMatrix::identity(total, total), "Σ Ω_σ ≠ I");
    let n = r.random_range(1..=3);
    let rw = uniform_vec(&mut r, total, 0.1, 3.0);
    let p = ActuatorParams::new(
        uniform(&mut r, n, n, -1.0, 1.0),
        uniform(&mut r, n, total, -1.0, 1.0),
        DMatrix::identity(n, n) * 2.0,
        DMatrix::from_diagonal(&rw),
        widths.clone(),
        (0..groups).collect(),
    )
    .map_err(e2s)?;
    let x = uniform_vec(&mut r, n, -1.0, 1.0);
    let u = uniform_vec(&mut r, total, -1.0, 1.0);
    for s in 0..groups {
        let pu = p.pi(s).map_err(e2s)? * &u;
        let want = x.dot(&(&p.q * &x)) + pu.dot(&(p.r_sigma(s).map_err(e2s)? * &pu));
        let got = act_stage_cost(&x, &u, s, &p).map_err(e2s)?;
        ensure!((got - want).abs() <= 1e-12 * (1.0 + want), "actuator cost {got} vs {want}");
    }
    Ok(())
}

// ------------------------------------------------------ synthesis checks

/// Big-block LMIs at the recovered solution and the condensed inequalities
/// agree; all `P_j ≻ 0`; ellipsoid blocks agree with the closed form.
pub fn check_tb_synthesis(p: &TokenBucketParams, s: &Synthesis) -> Check {
    let ing = &s.ingredients;
    let k = ing.shared_gain().ok_or("no shared gain")?;
    let level = match ing.region {
        RegionFamily::Ellipsoidal { alpha } => Some(alpha),
        _ => None,
    };
    let prob = build_tb_lmis(p, level).map_err(e2s)?;
    let mut values = vec![DMatrix::zeros(0, 0); prob.x.len() + 1];
    for (j, x) in prob.x.iter().enumerate() {
        let pj = &ing.costs[j];
        let e = min_eigenvalue(&SymmetricMatrix::symmetrize(pj.clone())).map_err(e2s)?;
        ensure!(e > 0.0, "P_{j} not positive definite ({e:e})");
        values[x.index()] = pj.clone().try_inverse().ok_or("singular P_j")?;
    }
    values[prob.y.index()] = k * &values[prob.x[0].index()];
    let block_ok = |b: &tvmpc::numerics::BlockLmi| -> Result<bool, String> {
        let m = b.evaluate(&values).map_err(e2s)?;
        // scale-aware: the blocks carry X_j and inverse weights
        let e = min_eigenvalue(&SymmetricMatrix::symmetrize(m.clone())).map_err(e2s)?;
        Ok(e >= -1e-6 * (1.0 + m.amax()))
    };
    let mut big = true;
    for j in 0..prob.decrease_blocks {
        big &= block_ok(prob.decrease_block(j))?;
    }
    let condensed = verify_tb(&ing.costs, k, p).map_err(e2s)?.iter().all(|m| *m >= -1e-6);
    ensure!(big == condensed, "big-block check {big} vs condensed check {condensed}");
    ensure!(condensed, "synthesized ingredients fail the decrease inequalities");
    if let Some(alpha) = level {
        let mut blocks = true;
        for b in &prob.sdp.blocks()[prob.decrease_blocks..] {
            blocks &= block_ok(b)?;
        }
        let closed = ellipsoid_excess(&ing.costs, k, alpha, p).map_err(e2s)? <= 1e-6;
        ensure!(blocks == closed, "ellipsoid blocks {blocks} vs closed form {closed}");
        ensure!(closed, "ellipsoid leaves the constraints");
    }
    // index wrap
    let mm = p.period();
    for j in 0..mm {
        let a = prob.decrease_block(j).evaluate(&values).map_err(e2s)?;
        let b = prob.decrease_block(j + mm).evaluate(&values).map_err(e2s)?;
        ensure!(a == b, "decrease block {j} differs from block {}", j + mm);
        ensure!(ing.cost_matrix(j) == ing.cost_matrix(j + mm), "F_{j} differs from F_{}", j + mm);
        ensure!(p.threshold(j) == p.threshold(j + mm), "threshold wrap");
        if let RegionFamily::Polytopic(f) = &ing.region {
            ensure!(f.map(j) == f.map(j + mm), "Z_{j} differs from Z_{}", j + mm);
        }
    }
    Ok(())
}

pub fn check_act_synthesis(p: &ActuatorParams, s: &Synthesis) -> Check {
    let ing = &s.ingredients;
    let TerminalGain::PerPhase(ks) = &ing.gain else {
        return Err("actuator ingredients need per-phase gains".into());
    };
    let prob = build_act_lmis(p).map_err(e2s)?;
    let mut values = vec![DMatrix::zeros(0, 0); 2 * prob.x.len()];
    for (j, x) in prob.x.iter().enumerate() {
        let e = min_eigenvalue(&SymmetricMatrix::symmetrize(ing.costs[j].clone())).map_err(e2s)?;
        ensure!(e > 0.0, "P_{j} not positive definite");
        values[x.index()] = ing.costs[j].clone().try_inverse().ok_or("singular P_j")?;
        values[prob.y[j].index()] = &ks[j] * &values[x.index()];
    }
    let mut big = true;
    for j in 0..prob.period() {
        let m = prob.decrease_block(j).evaluate(&values).map_err(e2s)?;
        big &= min_eigenvalue(&SymmetricMatrix::symmetrize(m.clone())).map_err(e2s)? >= -1e-6 * (1.0 + m.amax());
        let a = m;
        let b = prob.decrease_block(j + prob.period()).evaluate(&values).map_err(e2s)?;
        ensure!(a == b, "decrease block wrap");
    }
    let condensed = verify_act(&ing.costs, ks, p).map_err(e2s)?.iter().all(|m| *m >= -1e-6);
    ensure!(big == condensed, "big-block check {big} vs condensed check {condensed}");
    ensure!(condensed, "synthesized actuator ingredients fail the decrease inequalities");
    Ok(())
}

// ------------------------------------------------------------ MPC checks

fn same_solution(a: &Result<MpcSolution, Error>, b: &Result<MpcSolution, Error>) -> Check {
    match (a, b) {
        (Ok(x), Ok(y)) => {
            ensure!((x.value - y.value).abs() <= 1e-9 * x.value.abs().max(1.0), "values {} vs {}", x.value, y.value);
            ensure!(x.plan.schedule == y.plan.schedule, "schedules {:?} vs {:?}", x.plan.schedule, y.plan.schedule);
            Ok(())
        }
        (Err(Error::InfeasibleProblem(_)), Err(Error::InfeasibleProblem(_))) => Ok(()),
        (x, y) => Err(format!("outcomes differ: {:?} vs {:?}", x.as_ref().err(), y.as_ref().err())),
    }
}

/// Branch and bound against enumeration on one random token-bucket problem.
/// The start state is halved until the problem is feasible (at most six
/// times); returns whether it was.
pub fn check_tb_search(p: &TokenBucketParams, ing: &PeriodicTerminalIngredients, seed: u64) -> Result<bool, String> {
    let mut r = rng(seed);
    let n = r.random_range(1..=4);
    let mut x = random_tb_state(&mut r, p);
    let k = r.random_range(0..10);
    let cfg = MpcConfig::new(n).with_warm_start(false).with_initial_phase(r.random_range(0..p.period()));
    for _ in 0..7 {
        let bnb = solve_tv_mpc_tb(&x, k, &cfg.clone().with_search(ScheduleSearch::BranchAndBound), ing, p, None);
        let en = solve_tv_mpc_tb(&x, k, &cfg.clone().with_search(ScheduleSearch::Enumerate), ing, p, None);
        same_solution(&bnb, &en).map_err(|e| format!("N = {n}, k = {k}: {e}"))?;
        if bnb.is_ok() {
            return Ok(true);
        }
        x = TokenBucketState::new(x.xp * 0.5, x.us * 0.5, x.beta);
    }
    Ok(false)
}

pub fn check_act_search(p: &ActuatorParams, ing: &PeriodicTerminalIngredients, seed: u64) -> Result<bool, String> {
    let mut r = rng(seed);
    let n = r.random_range(1..=4);
    let x = uniform_vec(&mut r, p.n_p(), -2.0, 2.0);
    let k = r.random_range(0..10);
    let cfg = MpcConfig::new(n).with_warm_start(false).with_initial_phase(r.random_range(0..p.period()));
    let bnb = solve_tv_mpc_act(&x, k, &cfg.clone().with_search(ScheduleSearch::BranchAndBound), ing, p, None);
    let en = solve_tv_mpc_act(&x, k, &cfg.clone().with_search(ScheduleSearch::Enumerate), ing, p, None);
    same_solution(&bnb, &en).map_err(|e| format!("N = {n}, k = {k}: {e}"))?;
    // the optimum is no worse than any single schedule
    if let Ok(best) = bnb {
        let sched: Vec<usize> = (0..n).map(|_| r.random_range(0..p.period())).collect();
        let other = solve_fixed_schedule_act(&x, &sched, k, &cfg, ing, p).map_err(e2s)?;
        ensure!(best.value <= other.value + 1e-9, "optimum above the value of {sched:?}");
        return Ok(true);
    }
    Ok(false)
}

/// A random state, halved until the time-varying problem at `k` is feasible
/// (the rest state at full bucket always is).
pub fn feasible_tb_start(
    r: &mut ChaCha8Rng,
    p: &TokenBucketParams,
    cfg: &MpcConfig,
    k: usize,
    ing: &PeriodicTerminalIngredients,
) -> Result<TokenBucketState, String> {
    let mut x = random_tb_state(r, p);
    for _ in 0..40 {
        if solve_tv_mpc_tb(&x, k, cfg, ing, p, None).is_ok() {
            return Ok(x);
        }
        x = TokenBucketState::new(x.xp * 0.5, x.us * 0.5, x.beta);
    }
    Err(format!("no feasible start found (β = {})", x.beta))
}

/// Closed loop from a feasible start: every problem feasible, the shifted
/// candidate feasible and bounded by `V* − ℓ`, and the descent inequality.
pub fn check_recursive_feasibility(p: &TokenBucketParams, ing: &PeriodicTerminalIngredients, seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.random_range(p.period().max(2)..=p.period().max(2) + 2);
    let cfg = MpcConfig::new(n).with_warm_start(seed.is_multiple_of(2));
    let mut ctl = TbController::new(cfg.clone(), ing.clone(), p.clone()).map_err(e2s)?;
    let mut x = feasible_tb_start(&mut r, p, &cfg, 0, ing)?;
    let mm = p.period();
    for k in 0..12 {
        let sol = ctl.step(&x, k).map_err(|e| format!("k = {k}: {e}"))?;
        let u =
            if sol.decision == 1 { TokenBucketInput::send(sol.input.clone()) } else { TokenBucketInput::hold(p.m_p()) };
        let l = tb_stage_cost(&x, &u, p);
        let next = tb_step(&x, &u, p).map_err(e2s)?;
        // shifted candidate with the terminal controller's decision
        let plan = &sol.plan;
        let phase_n = cfg.phase(k, mm);
        let beta_n = *plan.levels.last().ok_or("plan without levels")?;
        let mut shifted = plan.schedule[1..].to_vec();
        shifted.push(usize::from(phase_n == 0 && beta_n >= p.threshold(0)));
        let cand = solve_fixed_schedule_tb(&next, &shifted, k + 1, &cfg, ing, p).map_err(e2s)?;
        ensure!(cand.feasible, "k = {k}: shifted candidate {shifted:?} infeasible");
        ensure!(
            cand.value <= sol.value - l + 1e-6 * (1.0 + sol.value),
            "k = {k}: candidate cost {} above V* − ℓ = {}",
            cand.value,
            sol.value - l
        );
        let next_sol = solve_tv_mpc_tb(&next, k + 1, &cfg, ing, p, None).map_err(|e| format!("k = {}: {e}", k + 1))?;
        ensure!(next_sol.value <= cand.value + 1e-9 * (1.0 + cand.value), "optimum above the shifted candidate");
        ensure!(next_sol.value - sol.value + l <= 1e-6, "k = {k}: descent slack {:e}", next_sol.value - sol.value + l);
        x = next;
    }
    Ok(())
}

pub fn check_phase_bookkeeping(j0: usize, period: usize, steps: usize) -> Check {
    let cfg = MpcConfig::new(1).with_initial_phase(j0);
    let mut counter = j0 % period;
    for k in 0..steps {
        ensure!(cfg.phase(k, period) == counter, "phase at k = {k}: {} vs {counter}", cfg.phase(k, period));
        counter += 1;
        if counter == period {
            counter = 0;
        }
    }
    Ok(())
}

/// At `k ≡ 0 (mod M)` both modes solve the same problem.
pub fn check_multistep_matches_tv(p: &TokenBucketParams, ing: &PeriodicTerminalIngredients, seed: u64) -> Check {
    let mut r = rng(seed);
    let mm = p.period();
    let n = mm.max(1) + r.random_range(0..=1);
    let k = mm * r.random_range(0..4);
    let tv = MpcConfig::new(n).with_warm_start(false);
    let ms = tv.clone().with_mode(MpcMode::MultiStep);
    let x = feasible_tb_start(&mut r, p, &tv, k, ing)?;
    let a = solve_tv_mpc_tb(&x, k, &tv, ing, p, None);
    let b = solve_multistep_mpc_tb(&x, k, &ms, ing, p, None);
    match (&a, &b) {
        (Ok(x), Ok(y)) => ensure!(x.value == y.value, "values {} vs {}", x.value, y.value),
        _ => return Err("multi-step problem infeasible where the time-varying one is not".into()),
    }
    Ok(())
}

// ---------------------------------------------------------- sim checks

pub fn check_trace_constraints(trace: &ClosedLoopTrace, p: &TokenBucketParams) -> Check {
    let n = p.n_p();
    for row in &trace.rows {
        let z = DVector::from_column_slice(&row.state);
        let xp = z.rows(0, n).into_owned();
        let us = z.rows(n, p.m_p()).into_owned();
        ensure!(p.state_set.contains(&xp, 1e-7).map_err(e2s)?, "k = {}: x_p outside X_p", row.k);
        ensure!(p.input_set.contains(&us, 1e-7).map_err(e2s)?, "k = {}: u_s outside U_p", row.k);
        let beta = row.beta.ok_or("missing β")?;
        ensure!((0..=p.capacity).contains(&beta), "k = {}: β = {beta}", row.k);
    }
    Ok(())
}

fn csv_bytes(t: &ClosedLoopTrace) -> Result<Vec<u8>, String> {
    let mut buf = Vec::new();
    t.without_timing().write_csv(&mut buf).map_err(e2s)?;
    Ok(buf)
}

/// Two runs of the same token-bucket closed loop give identical CSV bytes.
pub fn check_determinism(p: &TokenBucketParams, ing: &PeriodicTerminalIngredients, seed: u64) -> Check {
    let mut r = rng(seed);
    let cfg = MpcConfig::new(p.period().max(2));
    let x0 = SimState::TokenBucket(feasible_tb_start(&mut r, p, &cfg, 0, ing)?);
    let model = ModelParams::TokenBucket(p.clone());
    let run = || -> Result<Option<ClosedLoopTrace>, String> {
        let mut c = Controller::new(&model, ing, &cfg).map_err(e2s)?;
        match run_closed_loop(&mut c, &x0, 8) {
            Ok(t) => Ok(Some(t)),
            Err(Error::InfeasibleProblem(_)) => Ok(None),
            Err(e) => Err(e2s(e)),
        }
    };
    match (run()?, run()?) {
        (Some(a), Some(b)) => {
            ensure!(csv_bytes(&a)? == csv_bytes(&b)?, "traces differ");
            check_trace_constraints(&a, p)
        }
        _ => Err("closed loop from a feasible start became infeasible".into()),
    }
}

/// Trace with arbitrary finite numbers survives a CSV round trip.
pub fn random_trace(seed: u64) -> ClosedLoopTrace {
    let mut r = rng(seed);
    let nx = r.random_range(1..=4);
    let nu = r.random_range(1..=3);
    let tb = r.random_bool(0.5);
    let num = |r: &mut ChaCha8Rng| -> f64 {
        let mant: f64 = r.random_range(-1.0..1.0);
        let exp: i32 = r.random_range(-300..300);
        mant * 10f64.powi(exp)
    };
    let steps = r.random_range(0..6);
    let rows = (0..=steps)
        .map(|k| {
            let last = k == steps;
            TraceRow {
                k,
                state: (0..nx).map(|_| num(&mut r)).collect(),
                beta: tb.then(|| r.random_range(0..30)),
                input: (!last).then(|| (0..nu).map(|_| num(&mut r)).collect()),
                schedule: (!last).then(|| r.random_range(0..3)),
                v_star: Some(num(&mut r)),
                stage_cost: (!last).then(|| num(&mut r)),
                solve_ms: Some(r.random_range(0.0..10.0)),
                nodes: Some(r.random_range(0..1000)),
                descent_slack: (!last).then(|| num(&mut r)),
                dissipation_slack: (!last).then(|| num(&mut r)),
            }
        })
        .collect();
    ClosedLoopTrace {
        setup: if tb { SetupKind::TokenBucket } else { SetupKind::Actuator },
        state_dim: nx,
        input_dim: nu,
        rows,
    }
}

pub fn check_csv_roundtrip(t: &ClosedLoopTrace) -> Check {
    let mut buf = Vec::new();
    t.write_csv(&mut buf).map_err(e2s)?;
    let back = ClosedLoopTrace::read_csv(buf.as_slice()).map_err(e2s)?;
    ensure!(&back == t, "round trip changed the trace");
    Ok(())
}

/// Mean solve time is nondecreasing in `N` per mode, with ×`slack` noise margin.
pub fn check_benchmark_monotone(table: &tvmpc::sim::BenchmarkTable, slack: f64) -> Check {
    for mode in [MpcMode::TimeVarying, MpcMode::MultiStep] {
        let mut rows: Vec<(usize, f64)> = table
            .rows
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| Ok((r.horizon, r.mean_seconds.ok_or(format!("N = {} failed", r.horizon))?)))
            .collect::<Result<_, String>>()?;
        rows.sort_by_key(|r| r.0);
        for w in rows.windows(2) {
            ensure!(
                w[1].1 * slack >= w[0].1,
                "{mode:?}: N = {} took {:.3e} s, N = {} took {:.3e} s",
                w[0].0,
                w[0].1,
                w[1].0,
                w[1].1
            );
        }
    }
    Ok(())
}
