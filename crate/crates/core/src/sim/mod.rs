//! Closed-loop simulation, certificate checks along traces, the timing
//! benchmark and the experiment configuration format.

mod benchmark;
mod certificates;
pub mod config;
mod trace;

pub use benchmark::{benchmark_configs, run_benchmark, BenchmarkRow, BenchmarkTable};
pub use certificates::{check_certificates, CertificateReport, DESCENT_TOL, DISSIPATION_TOL};
pub use config::{Experiment, ExperimentConfig};
pub use trace::{ClosedLoopTrace, SetupKind, TraceRow};

use crate::error::{Error, Result};
use crate::models::{
    act_stage_cost, act_step, tb_stage_cost, tb_step, tb_storage, PeriodicTerminalIngredients, TokenBucketInput,
    TokenBucketState,
};
use crate::mpc::{ActController, MpcConfig, MpcSolution, TbController};
use crate::numerics::Vector;
use crate::synthesis::ModelParams;

/// Plant state of either setup.
#[derive(Debug, Clone, PartialEq)]
pub enum SimState {
    TokenBucket(TokenBucketState),
    Actuator(Vector),
}

impl SimState {
    /// `[x_p; u_s]` or `x_p`.
    pub fn vector(&self) -> Vector {
        match self {
            SimState::TokenBucket(s) => s.z(),
            SimState::Actuator(x) => x.clone(),
        }
    }

    pub fn beta(&self) -> Option<i64> {
        match self {
            SimState::TokenBucket(s) => Some(s.beta),
            SimState::Actuator(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Controller {
    TokenBucket(TbController),
    Actuator(ActController),
}

impl Controller {
    pub fn new(model: &ModelParams, ing: &PeriodicTerminalIngredients, cfg: &MpcConfig) -> Result<Self> {
        Ok(match model {
            ModelParams::TokenBucket(p) => {
                Controller::TokenBucket(TbController::new(cfg.clone(), ing.clone(), p.clone())?)
            }
            ModelParams::Actuator(p) => Controller::Actuator(ActController::new(cfg.clone(), ing.clone(), p.clone())?),
        })
    }

    pub fn config(&self) -> &MpcConfig {
        match self {
            Controller::TokenBucket(c) => &c.cfg,
            Controller::Actuator(c) => &c.cfg,
        }
    }

    pub fn period(&self) -> usize {
        match self {
            Controller::TokenBucket(c) => c.params.period(),
            Controller::Actuator(c) => c.params.period(),
        }
    }

    pub fn reset(&mut self) {
        match self {
            Controller::TokenBucket(c) => c.reset(),
            Controller::Actuator(c) => c.reset(),
        }
    }

    pub fn step(&mut self, x: &SimState, k: usize) -> Result<MpcSolution> {
        match (self, x) {
            (Controller::TokenBucket(c), SimState::TokenBucket(s)) => c.step(s, k),
            (Controller::Actuator(c), SimState::Actuator(s)) => c.step(s, k),
            _ => Err(Error::Config("initial state does not match the setup".into())),
        }
    }

    /// Successor state, stage cost `ℓ` and storage values `λ(x)`, `λ(x⁺)`.
    fn apply(&self, x: &SimState, sol: &MpcSolution) -> Result<(SimState, f64, f64, f64)> {
        match (self, x) {
            (Controller::TokenBucket(c), SimState::TokenBucket(s)) => {
                let p = &c.params;
                let u = if sol.decision == 1 {
                    TokenBucketInput::send(sol.input.clone())
                } else {
                    TokenBucketInput::hold(p.m_p())
                };
                let next = tb_step(s, &u, p)?;
                let l = tb_stage_cost(s, &u, p);
                let (lam, lam_next) = (tb_storage(s, p), tb_storage(&next, p));
                Ok((SimState::TokenBucket(next), l, lam, lam_next))
            }
            (Controller::Actuator(c), SimState::Actuator(xp)) => {
                let p = &c.params;
                let next = act_step(xp, &sol.input, sol.decision, p)?;
                let l = act_stage_cost(xp, &sol.input, sol.decision, p)?;
                Ok((SimState::Actuator(next), l, 0.0, 0.0))
            }
            _ => Err(Error::Config("state does not match the setup".into())),
        }
    }
}

/// Applies `u*(0|k)` for `steps` steps. The last row carries the final state
/// and its optimal value, so that every step has a descent slack.
pub fn run_closed_loop(controller: &mut Controller, x0: &SimState, steps: usize) -> Result<ClosedLoopTrace> {
    let setup = match x0 {
        SimState::TokenBucket(_) => SetupKind::TokenBucket,
        SimState::Actuator(_) => SetupKind::Actuator,
    };
    let state_dim = x0.vector().len();
    let input_dim = match controller {
        Controller::TokenBucket(c) => c.params.m_p(),
        Controller::Actuator(c) => c.params.m_p(),
    };
    let mut rows: Vec<TraceRow> = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    for k in 0..=steps {
        let sol = controller.step(&x, k)?;
        if let Some(prev) = rows.last_mut() {
            prev.descent_slack =
                Some(sol.value - prev.v_star.unwrap_or(f64::NAN) + prev.stage_cost.unwrap_or(f64::NAN));
        }
        let mut row = TraceRow::state_only(k, &x);
        row.v_star = Some(sol.value);
        row.solve_ms = Some(sol.solve_seconds * 1e3);
        row.nodes = Some(sol.nodes);
        if k < steps {
            let (next, l, lam, lam_next) = controller.apply(&x, &sol)?;
            row.input = Some(sol.input.iter().copied().collect());
            row.schedule = Some(sol.decision);
            row.stage_cost = Some(l);
            row.dissipation_slack = Some(l + lam - lam_next);
            x = next;
        }
        log::debug!("k = {k}: V* = {:.6e}, schedule {:?}", sol.value, sol.plan.schedule);
        rows.push(row);
    }
    Ok(ClosedLoopTrace { setup, state_dim, input_dim, rows })
}
