//! Terminal ingredients for actuator scheduling along the base schedule.
//!
//! With `X_j = P_j⁻¹` and `Y_j = K_jX_j` the phase-`j` LMI is equivalent to
//!
//! ```text
//! (A + BΩ_σK_j)ᵀP_{j+1}(A + BΩ_σK_j) − P_j + Q + K_jᵀΩ_σRK_j ⪯ 0,  σ = σ_j.
//! ```
//!
//! There are no constraints, so the terminal regions are the whole space.

use super::{Synthesis, SynthesisOptions};
use crate::error::{Error, Result};
use crate::models::{ActuatorParams, PeriodicTerminalIngredients, RegionFamily, TerminalGain};
use crate::numerics::{
    min_eig_sym, solve_sdp_with, spd_inverse, BlockLmi, DenseMatrix, SdpOutcome, SemidefiniteProgram, VarId, VarShape,
};
use nalgebra::DMatrix;

#[derive(Debug, Clone)]
pub struct ActLmiProblem {
    pub sdp: SemidefiniteProgram,
    pub x: Vec<VarId>,
    pub y: Vec<VarId>,
}

impl ActLmiProblem {
    pub fn period(&self) -> usize {
        self.x.len()
    }

    pub fn decrease_block(&self, j: usize) -> &BlockLmi {
        &self.sdp.blocks()[j % self.period()]
    }
}

pub fn build_act_lmis(p: &ActuatorParams) -> Result<ActLmiProblem> {
    p.validate()?;
    let (n, m) = (p.n_p(), p.m_p());
    let mm = p.period();
    let q_inv = spd_inverse(&p.q, "Q")?;
    let mut sdp = SemidefiniteProgram::new();
    let x: Vec<VarId> = (0..mm).map(|j| sdp.add_strict_var(format!("X_{j}"), n)).collect();
    let y: Vec<VarId> = (0..mm).map(|j| sdp.add_var(format!("Y_{j}"), VarShape::Full(m, n))).collect();
    let sym = VarShape::Symmetric(n);
    let i_n = DMatrix::identity(n, n);
    for j in 0..mm {
        let sigma = p.base_schedule[j];
        let w = p.widths[sigma];
        let r_inv = spd_inverse(&p.r_sigma(sigma)?, "R_σ")?;
        let b_omega = &p.b * p.omega(sigma)?;
        let pi = p.pi(sigma)?;
        // rows X_{j+1}, Q⁻¹, R_σ⁻¹, X_j
        let mut b = BlockLmi::new(format!("decrease phase {j}"), &[n, n, w, n]);
        b.add_var(0, 0, x[(j + 1) % mm], sym)?;
        b.add_constant(1, 1, &q_inv)?;
        b.add_constant(2, 2, &r_inv)?;
        b.add_var(3, 3, x[j], sym)?;
        b.add_term(0, 3, &p.a, x[j], &i_n, 1.0)?;
        b.add_term(0, 3, &b_omega, y[j], &i_n, 1.0)?;
        b.add_var(1, 3, x[j], sym)?;
        b.add_term(2, 3, &pi, y[j], &i_n, 1.0)?;
        sdp.add_block(b);
    }
    Ok(ActLmiProblem { sdp, x, y })
}

/// Margins `λ_min(−LHS_j)` of the condensed decrease inequalities.
pub fn verify_act(costs: &[DenseMatrix], gains: &[DenseMatrix], p: &ActuatorParams) -> Result<Vec<f64>> {
    let mm = p.period();
    let (n, m) = (p.n_p(), p.m_p());
    if costs.len() != mm || gains.len() != mm {
        return Err(Error::InvalidModel(format!("expected {mm} costs and gains")));
    }
    if costs.iter().any(|c| c.shape() != (n, n)) || gains.iter().any(|k| k.shape() != (m, n)) {
        return Err(Error::InvalidModel("cost or gain has the wrong shape".into()));
    }
    let mut margins = Vec::with_capacity(mm);
    for j in 0..mm {
        let omega = p.omega(p.base_schedule[j])?;
        let k = &gains[j];
        let acl = &p.a + &p.b * &omega * k;
        let lhs = acl.transpose() * &costs[(j + 1) % mm] * &acl - &costs[j] + &p.q + k.transpose() * &omega * &p.r * k;
        margins.push(min_eig_sym(&(-lhs)));
    }
    Ok(margins)
}

pub fn synthesize_act(p: &ActuatorParams, opts: &SynthesisOptions) -> Result<Synthesis> {
    let prob = build_act_lmis(p)?;
    let (values, sdp_margin) = match solve_sdp_with(&prob.sdp, &opts.sdp)? {
        SdpOutcome::Infeasible { margin_bound } => return Err(Error::SdpInfeasible(margin_bound)),
        SdpOutcome::Feasible { values, margin, .. } => (values, margin),
    };
    let mut costs = Vec::with_capacity(prob.period());
    let mut gains = Vec::with_capacity(prob.period());
    for j in 0..prob.period() {
        let xj = &values[prob.x[j].index()];
        let xinv = spd_inverse(xj, &format!("X_{j}"))?;
        // only the scheduled rows of Y_j enter the LMI; the rest are free
        let omega = p.omega(p.base_schedule[j])?;
        gains.push(omega * &values[prob.y[j].index()] * &xinv);
        costs.push((&xinv + xinv.transpose()) * 0.5);
    }
    let margins = verify_act(&costs, &gains, p)?;
    if let Some((j, m)) = margins.iter().enumerate().find(|(_, m)| **m < -1e-6) {
        return Err(Error::VerificationFailed {
            index: j,
            detail: format!("decrease inequality of phase {j} violated by {:e}", -m),
        });
    }
    Ok(Synthesis {
        ingredients: PeriodicTerminalIngredients {
            period: prob.period(),
            costs,
            gain: TerminalGain::PerPhase(gains),
            region: RegionFamily::Unbounded,
        },
        margins,
        inclusion_excess: Vec::new(),
        sdp_margin,
    })
}
