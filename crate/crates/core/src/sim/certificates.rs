//! Convergence certificates evaluated along a recorded trace.

use super::trace::ClosedLoopTrace;
use crate::error::{Error, Result};
use crate::models::{PeriodicTerminalIngredients, TerminalGain};
use crate::synthesis::{verify_act, verify_tb, ModelParams, MARGIN_TOL};

/// Largest admissible `V*(k+1) − V*(k) + ℓ(k)`.
pub const DESCENT_TOL: f64 = 1e-6;
/// Smallest admissible `ℓ + λ(x) − λ(x⁺)`.
pub const DISSIPATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    /// Per step `V*(k+1) − V*(k) + ℓ(k)` (the optimal average cost is zero).
    pub descent: Vec<f64>,
    /// Per step `ℓ(k) + λ(x(k)) − λ(x(k+1))`.
    pub dissipation: Vec<f64>,
    /// Terminal decrease margins recomputed from the ingredients.
    pub terminal_margins: Vec<f64>,
    pub descent_tol: f64,
}

impl CertificateReport {
    pub fn max_descent(&self) -> f64 {
        self.descent.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_dissipation(&self) -> f64 {
        self.dissipation.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn descent_ok(&self) -> bool {
        self.descent.iter().all(|d| *d <= self.descent_tol)
    }

    pub fn dissipation_ok(&self) -> bool {
        self.dissipation.iter().all(|d| *d >= -DISSIPATION_TOL)
    }

    pub fn margins_ok(&self) -> bool {
        self.terminal_margins.iter().all(|m| *m >= -MARGIN_TOL)
    }

    pub fn passed(&self) -> bool {
        self.descent_ok() && self.dissipation_ok() && self.margins_ok()
    }

    /// Steps whose descent slack exceeds the tolerance.
    pub fn descent_violations(&self) -> Vec<usize> {
        (0..self.descent.len()).filter(|&k| self.descent[k] > self.descent_tol).collect()
    }
}

/// Recomputes descent and dissipation slacks from the trace's states, values
/// and stage costs (not from its stored slack columns) and the terminal
/// margins from the ingredients.
pub fn check_certificates(
    trace: &ClosedLoopTrace,
    ing: &PeriodicTerminalIngredients,
    model: &ModelParams,
    eps: f64,
) -> Result<CertificateReport> {
    let terminal_margins = match (model, &ing.gain) {
        (ModelParams::TokenBucket(p), TerminalGain::Shared(k)) => verify_tb(&ing.costs, k, p)?,
        (ModelParams::Actuator(p), TerminalGain::PerPhase(ks)) => verify_act(&ing.costs, ks, p)?,
        _ => return Err(Error::Config("ingredients do not match the setup".into())),
    };
    // λ = ‖u_s‖²_R for the token bucket, zero for actuator scheduling
    let storage = |state: &[f64]| -> f64 {
        match model {
            ModelParams::TokenBucket(p) => {
                let n = p.n_p();
                let m = p.m_p();
                let mut acc = 0.0;
                for i in 0..m {
                    for j in 0..m {
                        acc += state[n + i] * p.r[(i, j)] * state[n + j];
                    }
                }
                acc
            }
            ModelParams::Actuator(_) => 0.0,
        }
    };
    let mut descent = Vec::new();
    let mut dissipation = Vec::new();
    for w in trace.rows.windows(2) {
        let (r, next) = (&w[0], &w[1]);
        let Some(l) = r.stage_cost else { continue };
        if let (Some(v), Some(vn)) = (r.v_star, next.v_star) {
            descent.push(vn - v + l);
        }
        dissipation.push(l + storage(&r.state) - storage(&next.state));
    }
    Ok(CertificateReport { descent, dissipation, terminal_margins, descent_tol: eps })
}
