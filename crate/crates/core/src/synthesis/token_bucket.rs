//! Terminal ingredients for the token-bucket setup.
//!
//! Decision variables are `X_j = P_j⁻¹` on `z = [x_p; u_s]` and `Y = KX_0`.
//! Phase 0 (transmit with `u_c = Kz`) gives one four-strip LMI, every other
//! phase (hold) a three-strip LMI; by Schur complements they are equivalent to
//!
//! ```text
//! A″ᵀP_1A″ − P_0 + diag(Q, 0) + KᵀRK ⪯ 0
//! A′ᵀP_{j+1}A′ − P_j + diag(Q, R)   ⪯ 0,   j = 1..M−1
//! ```

use super::{RegionMode, Synthesis, SynthesisOptions};
use crate::error::{Error, Result};
use crate::models::{PeriodicTerminalIngredients, RegionFamily, TerminalGain, TokenBucketParams};
use crate::numerics::{
    block_diag, min_eig_sym, solve_sdp_with, spd_inverse, BlockLmi, DenseMatrix, SdpOutcome, SemidefiniteProgram,
    VarId, VarShape,
};
use crate::polytope::{build_periodic_family, max_invariant_polytope, max_scaling, Polytope};
use nalgebra::DMatrix;

/// The assembled SDP together with handles to its decision matrices.
#[derive(Debug, Clone)]
pub struct TbLmiProblem {
    pub sdp: SemidefiniteProgram,
    pub x: Vec<VarId>,
    pub y: VarId,
    /// Number of decrease blocks (one per phase); ellipsoid blocks follow.
    pub decrease_blocks: usize,
    pub ellipsoid_level: Option<f64>,
}

impl TbLmiProblem {
    pub fn period(&self) -> usize {
        self.x.len()
    }

    /// Decrease LMI of phase `j mod M`.
    pub fn decrease_block(&self, j: usize) -> &BlockLmi {
        &self.sdp.blocks()[j % self.period()]
    }
}

fn as_row<S: nalgebra::RawStorage<f64, nalgebra::U1, nalgebra::Dyn>>(
    r: &nalgebra::Matrix<f64, nalgebra::U1, nalgebra::Dyn, S>,
) -> DenseMatrix {
    DMatrix::from_iterator(1, r.ncols(), r.iter().copied())
}

fn selector(rows: usize, cols: usize, offset: usize) -> DenseMatrix {
    let mut s = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        s[(i, offset + i)] = 1.0;
    }
    s
}

/// Assembles the decrease LMIs and, for `Some(α)`, the ellipsoid containment
/// blocks with that fixed level.
pub fn build_tb_lmis(p: &TokenBucketParams, ellipsoid_level: Option<f64>) -> Result<TbLmiProblem> {
    p.validate()?;
    let (n, m) = (p.n_p(), p.m_p());
    let nz = n + m;
    let mm = p.period();
    let q_inv = spd_inverse(&p.q, "Q")?;
    let r_inv = spd_inverse(&p.r, "R")?;

    let mut sdp = SemidefiniteProgram::new();
    let x: Vec<VarId> = (0..mm).map(|j| sdp.add_strict_var(format!("X_{j}"), nz)).collect();
    let y = sdp.add_var("Y", VarShape::Full(m, nz));
    let sym = VarShape::Symmetric(nz);
    let i_nz = DMatrix::identity(nz, nz);
    let sel_x = selector(n, nz, 0);
    let sel_u = selector(m, nz, n);

    // phase 0: rows X_1, Q⁻¹, R⁻¹, X_0
    let mut b0 = BlockLmi::new("decrease phase 0", &[nz, n, m, nz]);
    b0.add_var(0, 0, x[1 % mm], sym)?;
    b0.add_constant(1, 1, &q_inv)?;
    b0.add_constant(2, 2, &r_inv)?;
    b0.add_var(3, 3, x[0], sym)?;
    b0.add_term(0, 3, &p.a_tilde(), x[0], &i_nz, 1.0)?;
    b0.add_term(0, 3, &p.b_tilde(), y, &i_nz, 1.0)?;
    b0.add_term(1, 3, &sel_x, x[0], &i_nz, 1.0)?;
    b0.add_var(2, 3, y, VarShape::Full(m, nz))?;
    sdp.add_block(b0);

    // phases 1..M−1: rows X_{j+1}, diag(Q⁻¹, R⁻¹), X_j
    let a_prime = p.a_prime();
    let w_inv = block_diag(&[&q_inv, &r_inv]);
    for j in 1..mm {
        let mut b = BlockLmi::new(format!("decrease phase {j}"), &[nz, nz, nz]);
        b.add_var(0, 0, x[(j + 1) % mm], sym)?;
        b.add_constant(1, 1, &w_inv)?;
        b.add_var(2, 2, x[j], sym)?;
        b.add_term(0, 2, &a_prime, x[j], &i_nz, 1.0)?;
        b.add_var(1, 2, x[j], sym)?;
        sdp.add_block(b);
    }

    if let Some(alpha) = ellipsoid_level {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidModel(format!("ellipsoid level must be positive, got {alpha}")));
        }
        let one = DMatrix::from_element(1, 1, 1.0);
        let xs = p.state_set.rows();
        let us = p.input_set.rows();
        for (j, &xj) in x.iter().enumerate().take(mm) {
            for i in 0..xs.nrows() {
                let row = as_row(&(xs.row(i) * &sel_x));
                let mut b = BlockLmi::new(format!("state row {i} in Z_{j}"), &[1, nz]);
                b.add_constant(0, 0, &one)?;
                b.add_term(0, 1, &row, xj, &i_nz, 1.0)?;
                b.add_term(1, 1, &i_nz, xj, &i_nz, 1.0 / alpha)?;
                sdp.add_block(b);
            }
            for i in 0..us.nrows() {
                let row = as_row(&(us.row(i) * &sel_u));
                let mut b = BlockLmi::new(format!("held input row {i} in Z_{j}"), &[1, nz]);
                b.add_constant(0, 0, &one)?;
                b.add_term(0, 1, &row, xj, &i_nz, 1.0)?;
                b.add_term(1, 1, &i_nz, xj, &i_nz, 1.0 / alpha)?;
                sdp.add_block(b);
            }
        }
        for i in 0..us.nrows() {
            let row = as_row(&us.row(i));
            let mut b = BlockLmi::new(format!("sent input row {i}"), &[1, nz]);
            b.add_constant(0, 0, &one)?;
            b.add_term(0, 1, &row, y, &i_nz, 1.0)?;
            b.add_term(1, 1, &i_nz, x[0], &i_nz, 1.0 / alpha)?;
            sdp.add_block(b);
        }
    }
    Ok(TbLmiProblem { sdp, x, y, decrease_blocks: mm, ellipsoid_level })
}

/// Margins `λ_min(−LHS_j)` of the condensed decrease inequalities; the
/// ingredients are valid iff all are `≥ −1e-6`.
pub fn verify_tb(costs: &[DenseMatrix], k: &DenseMatrix, p: &TokenBucketParams) -> Result<Vec<f64>> {
    let mm = p.period();
    let nz = p.n_p() + p.m_p();
    if costs.len() != mm || costs.iter().any(|c| c.shape() != (nz, nz)) {
        return Err(Error::InvalidModel(format!("expected {mm} cost matrices of size {nz}×{nz}")));
    }
    if k.shape() != (p.m_p(), nz) {
        return Err(Error::InvalidModel("gain K has the wrong shape".into()));
    }
    let a_dd = p.a_double_prime(k);
    let a_p = p.a_prime();
    let q0 = block_diag(&[&p.q, &DMatrix::zeros(p.m_p(), p.m_p())]);
    let w = p.joint_weight();
    let mut margins = Vec::with_capacity(mm);
    for j in 0..mm {
        let next = &costs[(j + 1) % mm];
        let lhs = if j == 0 {
            a_dd.transpose() * next * &a_dd - &costs[0] + &q0 + k.transpose() * &p.r * k
        } else {
            a_p.transpose() * next * &a_p - &costs[j] + &w
        };
        margins.push(min_eig_sym(&(-lhs)));
    }
    Ok(margins)
}

/// Largest `α·c P_j⁻¹ cᵀ − 1` over all constraint rows (and the sent input
/// at phase 0); non-positive iff every ellipsoid `zᵀP_jz ≤ α` respects the
/// constraints.
pub fn ellipsoid_excess(costs: &[DenseMatrix], k: &DenseMatrix, alpha: f64, p: &TokenBucketParams) -> Result<f64> {
    let (n, m) = (p.n_p(), p.m_p());
    let nz = n + m;
    let joint = p.joint_set();
    let mut worst = f64::NEG_INFINITY;
    for (j, pj) in costs.iter().enumerate() {
        let xj = spd_inverse(pj, &format!("P_{j}"))?;
        for i in 0..joint.num_rows() {
            let c = joint.rows().row(i);
            worst = worst.max(alpha * (c * &xj * c.transpose())[(0, 0)] - 1.0);
        }
        if j == 0 {
            let kx = k * &xj * k.transpose();
            for i in 0..p.input_set.num_rows() {
                let d = p.input_set.rows().row(i);
                worst = worst.max(alpha * (d * &kx * d.transpose())[(0, 0)] - 1.0);
            }
        }
    }
    debug_assert!(nz == costs[0].nrows());
    Ok(worst)
}

struct Solved {
    costs: Vec<DenseMatrix>,
    gain: DenseMatrix,
    margin: f64,
}

fn solve(p: &TokenBucketParams, level: Option<f64>, opts: &SynthesisOptions) -> Result<Option<Solved>> {
    let prob = build_tb_lmis(p, level)?;
    match solve_sdp_with(&prob.sdp, &opts.sdp)? {
        SdpOutcome::Infeasible { margin_bound } => {
            log::debug!("token-bucket LMIs infeasible (margin bound {margin_bound:e})");
            Ok(None)
        }
        SdpOutcome::Feasible { values, margin, .. } => {
            let x0 = &values[prob.x[0].index()];
            let costs = prob
                .x
                .iter()
                .enumerate()
                .map(|(j, v)| spd_inverse(&values[v.index()], &format!("X_{j}")))
                .collect::<Result<Vec<_>>>()?;
            let x0_inv = spd_inverse(x0, "X_0")?;
            let gain = &values[prob.y.index()] * x0_inv;
            let costs = costs.into_iter().map(|c| (&c + c.transpose()) * 0.5).collect();
            Ok(Some(Solved { costs, gain, margin }))
        }
    }
}

/// Solves the LMIs, recovers `P_j = X_j⁻¹`, `K = YX_0⁻¹`, builds the region
/// family and verifies everything before returning.
pub fn synthesize_tb(p: &TokenBucketParams, mode: RegionMode, opts: &SynthesisOptions) -> Result<Synthesis> {
    let mm = p.period();
    let (solved, region) = match mode {
        RegionMode::Polytopic => {
            let s = solve(p, None, opts)?.ok_or(Error::SdpInfeasible(0.0))?;
            let family = polytopic_family(p, &s.gain, opts)?;
            (s, RegionFamily::Polytopic(family))
        }
        RegionMode::Ellipsoidal => {
            let (s, alpha) = bisect_level(p, opts)?;
            (s, RegionFamily::Ellipsoidal { alpha })
        }
    };
    let margins = verify_tb(&solved.costs, &solved.gain, p)?;
    if let Some((j, m)) = margins.iter().enumerate().find(|(_, m)| **m < -1e-6) {
        return Err(Error::VerificationFailed {
            index: j,
            detail: format!("decrease inequality of phase {j} violated by {:e}", -m),
        });
    }
    let ingredients = PeriodicTerminalIngredients {
        period: mm,
        costs: solved.costs,
        gain: TerminalGain::Shared(solved.gain),
        region,
    };
    let inclusion_excess = region_excess(&ingredients, p)?;
    if let Some((j, e)) = inclusion_excess.iter().enumerate().find(|(_, e)| **e > 1e-8) {
        return Err(Error::VerificationFailed {
            index: j,
            detail: format!("terminal region inclusion {j} exceeded by {e:e}"),
        });
    }
    Ok(Synthesis { ingredients, margins, inclusion_excess, sdp_margin: solved.margin })
}

/// Inclusion excesses of the region family: for polytopes the `M` periodic
/// inclusions, for ellipsoids the single worst constraint excess.
pub fn region_excess(ing: &PeriodicTerminalIngredients, p: &TokenBucketParams) -> Result<Vec<f64>> {
    let k =
        ing.shared_gain().ok_or_else(|| Error::InvalidModel("token-bucket ingredients need a shared gain".into()))?;
    match &ing.region {
        RegionFamily::Polytopic(family) => {
            let a_dd = p.a_double_prime(k);
            let mut e = family.inclusion_excess(&a_dd, &p.a_prime())?;
            e.extend(family.containment_excess(&p.joint_set())?);
            Ok(e)
        }
        RegionFamily::Ellipsoidal { alpha } => Ok(vec![ellipsoid_excess(&ing.costs, k, *alpha, p)?]),
        RegionFamily::Unbounded => {
            Err(Error::InvalidModel("constrained token-bucket setup needs bounded terminal regions".into()))
        }
    }
}

fn polytopic_family(
    p: &TokenBucketParams,
    k: &DenseMatrix,
    opts: &SynthesisOptions,
) -> Result<crate::polytope::PeriodicPolytopeFamily> {
    let mm = p.period();
    let a_dd = p.a_double_prime(k);
    let a_p = p.a_prime();
    // maps A′^{j−1}A″ for j = 1..M−1, then the monodromy A′^{M−1}A″
    let mut maps = Vec::with_capacity(mm);
    let mut l = a_dd.clone();
    for _ in 1..mm {
        maps.push(l.clone());
        l = &a_p * l;
    }
    let monodromy = l;
    let joint: Polytope = p.joint_set();
    let z = max_invariant_polytope(&monodromy, &joint, opts.max_invariant_iter)?;
    let alpha = max_scaling(&maps, &z, &joint)?;
    log::info!("invariant polytope with {} rows, scaling α* = {alpha:.4}", z.num_rows());
    if alpha <= 0.0 {
        return Err(Error::VerificationFailed { index: 0, detail: "terminal region scaling collapsed to zero".into() });
    }
    build_periodic_family(&z, alpha, &a_dd, &a_p, mm, &joint)
}

/// Largest `α` (to relative tolerance) for which the LMIs with ellipsoid
/// blocks stay feasible.
fn bisect_level(p: &TokenBucketParams, opts: &SynthesisOptions) -> Result<(Solved, f64)> {
    let mut lo: Option<(f64, Solved)> = None;
    let mut hi: Option<f64> = None;
    let mut alpha = 1.0;
    // bracket
    for _ in 0..60 {
        match solve(p, Some(alpha), opts)? {
            Some(s) => {
                lo = Some((alpha, s));
                if hi.is_some() {
                    break;
                }
                alpha *= 4.0;
            }
            None => {
                hi = Some(alpha);
                if lo.is_some() {
                    break;
                }
                alpha /= 4.0;
            }
        }
        if lo.is_some() && hi.is_some() {
            break;
        }
    }
    let (mut a_lo, mut best) = lo.ok_or(Error::SdpInfeasible(0.0))?;
    let Some(mut a_hi) = hi else {
        return Ok((best, a_lo));
    };
    while (a_hi - a_lo) > opts.level_rel_tol * a_lo {
        let mid = 0.5 * (a_lo + a_hi);
        match solve(p, Some(mid), opts)? {
            Some(s) => {
                a_lo = mid;
                best = s;
            }
            None => a_hi = mid,
        }
    }
    Ok((best, a_lo))
}
