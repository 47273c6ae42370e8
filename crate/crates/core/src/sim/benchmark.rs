//! Solve-time benchmark.
//!
//! Multi-step rows time the solve at `k = 0` only; time-varying rows average
//! the first `M` closed-loop solves. Warm starts are always disabled so both
//! modes solve from scratch. Times cover the optimization only.

use super::{Controller, SimState};
use crate::error::Result;
use crate::models::PeriodicTerminalIngredients;
use crate::mpc::{MpcConfig, MpcMode};
use crate::synthesis::ModelParams;
use std::io::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub mode: MpcMode,
    pub horizon: usize,
    pub mean_seconds: Option<f64>,
    /// Mean time relative to the reference row.
    pub relative: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkTable {
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkTable {
    pub fn row(&self, mode: MpcMode, horizon: usize) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.mode == mode && r.horizon == horizon)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["mode", "N", "mean_ms", "relative_percent", "error"])?;
        for r in &self.rows {
            let mode = match r.mode {
                MpcMode::TimeVarying => "time_varying",
                MpcMode::MultiStep => "multi_step",
            };
            wr.write_record([
                mode.to_string(),
                r.horizon.to_string(),
                r.mean_seconds.map(|s| format!("{:?}", s * 1e3)).unwrap_or_default(),
                r.relative.map(|x| format!("{:.1}", x * 100.0)).unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn time_row(
    model: &ModelParams,
    ing: &PeriodicTerminalIngredients,
    cfg: &MpcConfig,
    x0: &SimState,
    repetitions: usize,
) -> Result<f64> {
    let cfg = cfg.clone().with_warm_start(false);
    let mut ctl = Controller::new(model, ing, &cfg)?;
    let solves = match cfg.mode {
        MpcMode::MultiStep => 1,
        MpcMode::TimeVarying => model.period(),
    };
    let mut total = 0.0;
    for _ in 0..repetitions.max(1) {
        ctl.reset();
        let mut x = x0.clone();
        for k in 0..solves {
            let sol = ctl.step(&x, k)?;
            total += sol.solve_seconds;
            x = ctl.apply(&x, &sol)?.0;
        }
    }
    Ok(total / (repetitions.max(1) * solves) as f64)
}

/// One row per configuration; failures are recorded in the row. The
/// relative column is normalized to the time-varying `N = 8` row, or to the
/// first timed row if that is absent.
pub fn run_benchmark(
    model: &ModelParams,
    ing: &PeriodicTerminalIngredients,
    configs: &[MpcConfig],
    x0: &SimState,
    repetitions: usize,
) -> BenchmarkTable {
    let mut rows: Vec<BenchmarkRow> = configs
        .iter()
        .map(|cfg| {
            let (mean_seconds, error) = match time_row(model, ing, cfg, x0, repetitions) {
                Ok(t) => (Some(t), None),
                Err(e) => (None, Some(e.to_string())),
            };
            BenchmarkRow { mode: cfg.mode, horizon: cfg.horizon, mean_seconds, relative: None, error }
        })
        .collect();
    let reference = rows
        .iter()
        .find(|r| r.mode == MpcMode::TimeVarying && r.horizon == 8 && r.mean_seconds.is_some())
        .or_else(|| rows.iter().find(|r| r.mean_seconds.is_some()))
        .and_then(|r| r.mean_seconds);
    if let Some(t_ref) = reference {
        for r in &mut rows {
            r.relative = r.mean_seconds.map(|t| t / t_ref);
        }
    }
    BenchmarkTable { rows }
}

/// Rows for a list of horizons: a time-varying row for each, and a
/// multi-step row wherever `N ≥ M`.
pub fn benchmark_configs(base: &MpcConfig, horizons: &[usize], period: usize) -> Vec<MpcConfig> {
    let mut out = Vec::new();
    for &n in horizons {
        let mut tv = base.clone().with_mode(MpcMode::TimeVarying);
        tv.horizon = n;
        out.push(tv);
        if n >= period {
            let mut ms = base.clone().with_mode(MpcMode::MultiStep);
            ms.horizon = n;
            ms.initial_phase = 0;
            out.push(ms);
        }
    }
    out
}
