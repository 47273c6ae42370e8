//! Experiment configuration: one JSON document per experiment.
//!
//! ```json
//! {
//!   "plant":       { "fixture": "batch_reactor", "sampling_period": 0.1 },
//!   "network":     { "g": 1, "c": 8, "b": 22 },
//!   "cost":        { "q": { "diag": [10, 10, 10, 10] }, "r": [[1, 0], [0, 1]] },
//!   "constraints": { "state": { "box": [2, 2, 2, 2] }, "input": { "box": [3, 3] } },
//!   "mpc":         { "horizon": 8, "mode": "time_varying" },
//!   "synthesis":   { "region_mode": "polytopic" },
//!   "initial":     { "xp": [1, 0, 1, 0], "us": [0, 0], "beta": 22 }
//! }
//! ```
//!
//! The plant is either a named fixture or inline `a`, `b` rows. The network
//! section holds `g`, `c`, `b` for a token bucket or `widths` and
//! `base_schedule` for actuator scheduling. Matrices are row lists or
//! `{"diag": [...]}`; sets are `{"box": [...]}` (symmetric bounds) or
//! `{"rows": [...]}` (rows `c` of `c·x ≤ 1`).

use super::SimState;
use crate::error::{Error, Result};
use crate::models::{fixtures, ActuatorParams, TokenBucketParams, TokenBucketState};
use crate::mpc::MpcConfig;
use crate::numerics::DenseMatrix;
use crate::polytope::Polytope;
use crate::synthesis::{ModelParams, RegionMode, SynthesisOptions};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantSection,
    pub network: NetworkSection,
    pub cost: CostSection,
    #[serde(default)]
    pub constraints: Option<ConstraintSection>,
    #[serde(default)]
    pub mpc: MpcConfig,
    #[serde(default)]
    pub synthesis: SynthesisSection,
    pub initial: InitialSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    #[serde(default)]
    pub fixture: Option<String>,
    #[serde(default)]
    pub sampling_period: Option<f64>,
    #[serde(default)]
    pub a: Option<Value>,
    #[serde(default)]
    pub b: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default)]
    pub g: Option<i64>,
    #[serde(default)]
    pub c: Option<i64>,
    #[serde(default)]
    pub b: Option<i64>,
    #[serde(default)]
    pub widths: Option<Vec<usize>>,
    #[serde(default)]
    pub base_schedule: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub q: Value,
    pub r: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSection {
    pub state: Value,
    pub input: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisSection {
    pub region_mode: RegionMode,
    pub max_invariant_iter: usize,
    pub level_rel_tol: f64,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        let d = SynthesisOptions::default();
        SynthesisSection {
            region_mode: RegionMode::Polytopic,
            max_invariant_iter: d.max_invariant_iter,
            level_rel_tol: d.level_rel_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    /// Plant state (token bucket) — or use `x` for actuator scheduling.
    #[serde(default)]
    pub xp: Option<Vec<f64>>,
    #[serde(default)]
    pub us: Option<Vec<f64>>,
    #[serde(default)]
    pub beta: Option<i64>,
    #[serde(default)]
    pub x: Option<Vec<f64>>,
}

/// A fully validated experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: ModelParams,
    pub mpc: MpcConfig,
    pub region_mode: RegionMode,
    pub synthesis: SynthesisOptions,
    pub initial: SimState,
}

fn field_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

fn parse_rows(v: &Value, field: &str) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<Vec<f64>> =
        serde_json::from_value(v.clone()).map_err(|_| field_err(field, "expected a list of numeric rows"))?;
    Ok(rows)
}

pub(crate) fn parse_matrix(v: &Value, field: &str) -> Result<DenseMatrix> {
    if let Some(d) = v.get("diag") {
        let diag: Vec<f64> =
            serde_json::from_value(d.clone()).map_err(|_| field_err(field, "diag must be a list of numbers"))?;
        return Ok(DMatrix::from_diagonal(&DVector::from_vec(diag)));
    }
    let rows = parse_rows(v, field)?;
    crate::numerics::serde_matrix::from_rows(&rows).map_err(|e| field_err(field, e))
}

fn parse_set(v: &Value, dim: usize, field: &str) -> Result<Polytope> {
    let p = if let Some(b) = v.get("box") {
        let bounds: Vec<f64> =
            serde_json::from_value(b.clone()).map_err(|_| field_err(field, "box must be a list of numbers"))?;
        Polytope::symmetric_box(&bounds).map_err(|e| field_err(field, e))?
    } else if let Some(r) = v.get("rows") {
        Polytope::from_rows(dim, &parse_rows(r, field)?).map_err(|e| field_err(field, e))?
    } else {
        return Err(field_err(field, "expected {\"box\": [...]} or {\"rows\": [...]}"));
    };
    if p.dim() != dim {
        return Err(field_err(field, format!("set has dimension {} but {dim} is needed", p.dim())));
    }
    Ok(p)
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("malformed config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        ExperimentConfig::from_json(&text)
    }

    fn plant(&self) -> Result<(DenseMatrix, DenseMatrix)> {
        let pl = &self.plant;
        match (&pl.fixture, &pl.a, &pl.b) {
            (Some(name), None, None) => {
                let h = pl.sampling_period.unwrap_or(fixtures::SAMPLING_PERIOD);
                if !(h > 0.0) {
                    return Err(field_err("plant.sampling_period", "must be positive"));
                }
                fixtures::plant_fixture(name, h).map_err(|e| field_err("plant.fixture", e))
            }
            (None, Some(a), Some(b)) => {
                if pl.sampling_period.is_some() {
                    return Err(field_err("plant.sampling_period", "only applies to fixtures"));
                }
                Ok((parse_matrix(a, "plant.a")?, parse_matrix(b, "plant.b")?))
            }
            _ => Err(field_err("plant", "give either `fixture` or both `a` and `b`")),
        }
    }

    pub fn build(&self) -> Result<Experiment> {
        let (a, b) = self.plant()?;
        let q = parse_matrix(&self.cost.q, "cost.q")?;
        let r = parse_matrix(&self.cost.r, "cost.r")?;
        if q.shape() != (a.nrows(), a.nrows()) {
            return Err(field_err("cost.q", format!("expected {0}×{0}, got {1}×{2}", a.nrows(), q.nrows(), q.ncols())));
        }
        if r.shape() != (b.ncols(), b.ncols()) {
            return Err(field_err("cost.r", format!("expected {0}×{0}, got {1}×{2}", b.ncols(), r.nrows(), r.ncols())));
        }
        let net = &self.network;
        let init = &self.initial;
        let (model, initial) = match (&net.widths, net.g, net.c, net.b) {
            (None, Some(g), Some(c), Some(cap)) => {
                if net.base_schedule.is_some() {
                    return Err(field_err("network.base_schedule", "only applies to actuator scheduling"));
                }
                let cons = self
                    .constraints
                    .as_ref()
                    .ok_or_else(|| field_err("constraints", "required for the token-bucket setup"))?;
                let state_set = parse_set(&cons.state, a.nrows(), "constraints.state")?;
                let input_set = parse_set(&cons.input, b.ncols(), "constraints.input")?;
                let p = TokenBucketParams::new(a, b, q, r, g, c, cap, state_set, input_set)
                    .map_err(|e| field_err("network", e))?;
                if init.x.is_some() {
                    return Err(field_err("initial.x", "use xp, us and beta for the token-bucket setup"));
                }
                let xp = init.xp.clone().ok_or_else(|| field_err("initial.xp", "missing"))?;
                let us = init.us.clone().unwrap_or_else(|| vec![0.0; p.m_p()]);
                let beta = init.beta.unwrap_or(p.capacity);
                if xp.len() != p.n_p() {
                    return Err(field_err("initial.xp", format!("expected {} entries", p.n_p())));
                }
                if us.len() != p.m_p() {
                    return Err(field_err("initial.us", format!("expected {} entries", p.m_p())));
                }
                if !(0..=p.capacity).contains(&beta) {
                    return Err(field_err("initial.beta", format!("must lie in 0..={}", p.capacity)));
                }
                let s = TokenBucketState::new(DVector::from_vec(xp), DVector::from_vec(us), beta);
                (ModelParams::TokenBucket(p), SimState::TokenBucket(s))
            }
            (Some(widths), None, None, None) => {
                if self.constraints.is_some() {
                    return Err(field_err("constraints", "actuator scheduling is unconstrained"));
                }
                let base = net.base_schedule.clone().unwrap_or_else(|| (0..widths.len()).collect());
                let p = ActuatorParams::new(a, b, q, r, widths.clone(), base).map_err(|e| field_err("network", e))?;
                if init.xp.is_some() || init.us.is_some() || init.beta.is_some() {
                    return Err(field_err("initial", "use `x` for actuator scheduling"));
                }
                let x = init.x.clone().ok_or_else(|| field_err("initial.x", "missing"))?;
                if x.len() != p.n_p() {
                    return Err(field_err("initial.x", format!("expected {} entries", p.n_p())));
                }
                (ModelParams::Actuator(p), SimState::Actuator(DVector::from_vec(x)))
            }
            _ => {
                return Err(field_err(
                    "network",
                    "give either `g`, `c`, `b` (token bucket) or `widths` (actuator scheduling)",
                ))
            }
        };
        self.mpc.validate(model.period()).map_err(|e| field_err("mpc", e))?;
        let synthesis = SynthesisOptions {
            max_invariant_iter: self.synthesis.max_invariant_iter,
            level_rel_tol: self.synthesis.level_rel_tol,
            ..Default::default()
        };
        Ok(Experiment { model, mpc: self.mpc.clone(), region_mode: self.synthesis.region_mode, synthesis, initial })
    }
}
