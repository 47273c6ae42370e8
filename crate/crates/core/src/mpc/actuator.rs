//! MPC for actuator scheduling. Without constraints each fixed schedule is a
//! time-varying LQ problem solved exactly by a backward Riccati recursion.

use super::search::{search, ScheduleProblem};
use super::{MpcConfig, MpcMode, MpcSolution, SchedulePlan};
use crate::error::{Error, Result};
use crate::models::{ActuatorParams, PeriodicTerminalIngredients};
use crate::numerics::{quad_form, DenseMatrix, Vector};
use nalgebra::DMatrix;
use std::time::Instant;

/// Backward recursion from `P̄_N = terminal`; returns `P̄_0` and the gains
/// `L_i` with `u_σ = −L_i x`.
fn riccati(schedule: &[usize], terminal: &DenseMatrix, p: &ActuatorParams) -> Result<(DenseMatrix, Vec<DenseMatrix>)> {
    let mut pk = terminal.clone();
    let mut gains = vec![DMatrix::zeros(0, 0); schedule.len()];
    for i in (0..schedule.len()).rev() {
        let s = schedule[i];
        let bs = p.b_sigma(s)?;
        let pb = &pk * &bs;
        let lhs = p.r_sigma(s)? + bs.transpose() * &pb;
        let rhs = pb.transpose() * &p.a;
        let l = lhs.cholesky().ok_or_else(|| Error::Solver("R_σ + B̄ᵀP̄B̄ is not positive definite".into()))?.solve(&rhs);
        let pa = &pk * &p.a;
        let next = &p.q + p.a.transpose() * &pa - rhs.transpose() * &l;
        pk = (&next + next.transpose()) * 0.5;
        gains[i] = l;
    }
    Ok((pk, gains))
}

fn solve_schedule_phase(
    xp: &Vector,
    schedule: &[usize],
    phase: usize,
    ing: &PeriodicTerminalIngredients,
    p: &ActuatorParams,
) -> Result<SchedulePlan> {
    if xp.len() != p.n_p() {
        return Err(Error::InvalidModel("state dimension does not match the plant".into()));
    }
    let terminal = ing.cost_matrix(phase);
    let (p0, gains) = riccati(schedule, terminal, p)?;
    let mut states = vec![xp.clone()];
    let mut inputs = Vec::with_capacity(schedule.len());
    for (i, &s) in schedule.iter().enumerate() {
        let us = -(&gains[i] * &states[i]);
        let u = p.pi(s)?.transpose() * us;
        states.push(&p.a * &states[i] + &p.b * &u);
        inputs.push(u);
    }
    Ok(SchedulePlan {
        schedule: schedule.to_vec(),
        inputs,
        states,
        levels: Vec::new(),
        value: quad_form(&p0, xp),
        feasible: true,
    })
}

fn check_setup(cfg: &MpcConfig, ing: &PeriodicTerminalIngredients, p: &ActuatorParams) -> Result<usize> {
    let mm = p.period();
    cfg.validate(mm)?;
    if ing.period != mm || ing.costs.iter().any(|c| c.shape() != (p.n_p(), p.n_p())) {
        return Err(Error::InvalidModel(format!("ingredients must hold {mm} terminal costs of size {}", p.n_p())));
    }
    Ok(mm)
}

/// Exact optimum for a fixed actuator sequence at time `k`.
pub fn solve_fixed_schedule_act(
    xp: &Vector,
    schedule: &[usize],
    k: usize,
    cfg: &MpcConfig,
    ing: &PeriodicTerminalIngredients,
    p: &ActuatorParams,
) -> Result<SchedulePlan> {
    let mm = check_setup(cfg, ing, p)?;
    if schedule.len() != cfg.horizon || schedule.iter().any(|&s| s >= mm) {
        return Err(Error::Config(format!("schedule must list {} actuator indices below {mm}", cfg.horizon)));
    }
    solve_schedule_phase(xp, schedule, cfg.phase(k, mm), ing, p)
}

struct ActProblem<'a> {
    xp: &'a Vector,
    phase: usize,
    horizon: usize,
    ing: &'a PeriodicTerminalIngredients,
    p: &'a ActuatorParams,
}

impl ScheduleProblem for ActProblem<'_> {
    fn arity(&self) -> usize {
        self.p.period()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn prefix_feasible(&self, _: &[usize]) -> bool {
        true
    }

    /// Optimal stage cost over the prefix alone (zero terminal weight).
    fn lower_bound(&self, prefix: &[usize]) -> Result<f64> {
        let n = self.p.n_p();
        let (p0, _) = riccati(prefix, &DMatrix::zeros(n, n), self.p)?;
        Ok(quad_form(&p0, self.xp) * (1.0 - 1e-12))
    }

    fn evaluate(&self, schedule: &[usize]) -> Result<SchedulePlan> {
        solve_schedule_phase(self.xp, schedule, self.phase, self.ing, self.p)
    }
}

fn search_phase(
    xp: &Vector,
    phase: usize,
    cfg: &MpcConfig,
    ing: &PeriodicTerminalIngredients,
    p: &ActuatorParams,
    incumbent: Option<&[usize]>,
    k: usize,
) -> Result<MpcSolution> {
    let start = Instant::now();
    let problem = ActProblem { xp, phase, horizon: cfg.horizon, ing, p };
    let res = search(&problem, cfg.schedule_search, cfg.tie_tolerance, incumbent)?;
    let elapsed = start.elapsed().as_secs_f64();
    let best = res.best.ok_or(Error::InfeasibleProblem(k))?;
    Ok(MpcSolution::from_plan(best, elapsed, res.nodes))
}

/// `P(x(k), k)` over all `M^N` actuator sequences.
pub fn solve_tv_mpc_act(
    xp: &Vector,
    k: usize,
    cfg: &MpcConfig,
    ing: &PeriodicTerminalIngredients,
    p: &ActuatorParams,
    prev: Option<&SchedulePlan>,
) -> Result<MpcSolution> {
    let mm = check_setup(cfg, ing, p)?;
    let phase = cfg.phase(k, mm);
    let incumbent = match prev {
        Some(pl) if cfg.warm_start && pl.feasible && !pl.schedule.is_empty() => {
            // the terminal controller of the previous phase follows the base schedule
            let mut s = pl.schedule[1..].to_vec();
            s.push(p.base_schedule[(phase + mm - 1) % mm]);
            Some(s)
        }
        _ => None,
    };
    search_phase(xp, phase, cfg, ing, p, incumbent.as_deref(), k)
}

/// Closed-loop controller for actuator scheduling; the multi-step mode
/// solves against `F_0` every `M` steps and replays in between.
#[derive(Debug, Clone)]
pub struct ActController {
    pub cfg: MpcConfig,
    pub ingredients: PeriodicTerminalIngredients,
    pub params: ActuatorParams,
    last: Option<SchedulePlan>,
}

impl ActController {
    pub fn new(cfg: MpcConfig, ingredients: PeriodicTerminalIngredients, params: ActuatorParams) -> Result<Self> {
        check_setup(&cfg, &ingredients, &params)?;
        ingredients.validate()?;
        Ok(ActController { cfg, ingredients, params, last: None })
    }

    pub fn reset(&mut self) {
        self.last = None;
    }

    pub fn step(&mut self, xp: &Vector, k: usize) -> Result<MpcSolution> {
        let mm = self.params.period();
        let sol = match self.cfg.mode {
            MpcMode::TimeVarying => {
                solve_tv_mpc_act(xp, k, &self.cfg, &self.ingredients, &self.params, self.last.as_ref())?
            }
            MpcMode::MultiStep if k.is_multiple_of(mm) => {
                search_phase(xp, 0, &self.cfg, &self.ingredients, &self.params, None, k)?
            }
            MpcMode::MultiStep => {
                let r = k % mm;
                let plan = self
                    .last
                    .clone()
                    .ok_or_else(|| Error::Config("multi-step replay needs the plan of the last solve".into()))?;
                let n = self.params.n_p();
                let horizon = plan.schedule.len();
                let mut value = self.ingredients.terminal_cost(0, &plan.states[horizon]);
                for i in r..horizon {
                    value += quad_form(&self.params.q, &plan.states[i]) + quad_form(&self.params.r, &plan.inputs[i]);
                }
                debug_assert_eq!(plan.states[0].len(), n);
                MpcSolution {
                    input: plan.inputs[r].clone(),
                    decision: plan.schedule[r],
                    value,
                    plan,
                    solve_seconds: 0.0,
                    nodes: 0,
                }
            }
        };
        self.last = Some(sol.plan.clone());
        Ok(sol)
    }
}
