//! Receding-horizon co-optimization of schedules and inputs.
//!
//! The integer part (which packet is sent, or which actuator is served) is
//! searched by enumeration or depth-first branch and bound; each fixed
//! schedule is a convex subproblem. The terminal set and cost used at time
//! `k` are those of phase `(j₀ + k) mod M`.

mod actuator;
mod search;
mod token_bucket;

pub use actuator::{solve_fixed_schedule_act, solve_tv_mpc_act, ActController};
pub use token_bucket::{
    bucket_trajectory, feasible_schedules_tb, solve_fixed_schedule_tb, solve_multistep_mpc_tb, solve_tv_mpc_tb,
    BucketTrajectory, FeasibleSchedules, TbController,
};

use crate::error::{Error, Result};
use crate::numerics::Vector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MpcMode {
    /// Re-solve every step with the rotating terminal ingredients.
    #[default]
    TimeVarying,
    /// Re-solve every `M` steps against `S_0`, `F_0` and replay the plan.
    MultiStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleSearch {
    Enumerate,
    #[default]
    BranchAndBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    #[serde(alias = "N")]
    pub horizon: usize,
    #[serde(alias = "j0")]
    pub initial_phase: usize,
    pub mode: MpcMode,
    pub warm_start: bool,
    #[serde(alias = "search")]
    pub schedule_search: ScheduleSearch,
    /// Absolute tolerance under which two subproblem values count as equal.
    pub tie_tolerance: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            horizon: 8,
            initial_phase: 0,
            mode: MpcMode::TimeVarying,
            warm_start: true,
            schedule_search: ScheduleSearch::BranchAndBound,
            tie_tolerance: 1e-9,
        }
    }
}

impl MpcConfig {
    pub fn new(horizon: usize) -> Self {
        MpcConfig { horizon, ..Default::default() }
    }

    pub fn with_mode(mut self, mode: MpcMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_search(mut self, search: ScheduleSearch) -> Self {
        self.schedule_search = search;
        self
    }

    pub fn with_warm_start(mut self, on: bool) -> Self {
        self.warm_start = on;
        self
    }

    pub fn with_initial_phase(mut self, j0: usize) -> Self {
        self.initial_phase = j0;
        self
    }

    pub fn validate(&self, period: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("mpc.horizon must be at least 1".into()));
        }
        if self.initial_phase >= period {
            return Err(Error::Config(format!(
                "mpc.initial_phase {} must be below the period {period}",
                self.initial_phase
            )));
        }
        if self.mode == MpcMode::MultiStep && self.horizon < period {
            return Err(Error::Config(format!(
                "multi-step MPC needs mpc.horizon ≥ M = {period}, got {}",
                self.horizon
            )));
        }
        if !(self.tie_tolerance >= 0.0) {
            return Err(Error::Config("mpc.tie_tolerance must be non-negative".into()));
        }
        Ok(())
    }

    /// Phase `(j₀ + k) mod M` of the terminal ingredients at time `k`.
    pub fn phase(&self, k: usize, period: usize) -> usize {
        (self.initial_phase + k % period) % period
    }
}

/// Optimum of the subproblem for one fixed schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulePlan {
    /// `γ_i ∈ {0, 1}` for the token bucket, `σ_i` for actuator scheduling.
    pub schedule: Vec<usize>,
    /// Input applied to the plant at each step (held or zeroed entries included).
    #[serde(with = "crate::numerics::serde_matrix::vector_list")]
    pub inputs: Vec<Vector>,
    /// Predicted states `0..=N` (`[x_p; u_s]` or `x_p`).
    #[serde(with = "crate::numerics::serde_matrix::vector_list")]
    pub states: Vec<Vector>,
    /// Predicted bucket levels `0..=N`; empty for actuator scheduling.
    pub levels: Vec<i64>,
    pub value: f64,
    pub feasible: bool,
}

impl SchedulePlan {
    pub fn infeasible(schedule: Vec<usize>) -> Self {
        SchedulePlan {
            schedule,
            inputs: Vec::new(),
            states: Vec::new(),
            levels: Vec::new(),
            value: f64::INFINITY,
            feasible: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub plan: SchedulePlan,
    /// `u*(0|k)`.
    pub input: Vector,
    /// First schedule entry.
    pub decision: usize,
    /// `V*(x(k), k)`; for replayed multi-step steps, the remaining plan cost.
    pub value: f64,
    pub solve_seconds: f64,
    pub nodes: usize,
}

impl MpcSolution {
    fn from_plan(plan: SchedulePlan, solve_seconds: f64, nodes: usize) -> Self {
        MpcSolution {
            input: plan.inputs[0].clone(),
            decision: plan.schedule[0],
            value: plan.value,
            plan,
            solve_seconds,
            nodes,
        }
    }
}
