//! Closed-loop traces and their CSV form.
//!
//! Columns: `k`, state components `x0…`, `beta` (token bucket only), input
//! components `u0…`, `schedule`, `V_star`, `stage_cost`, `solve_ms`, `nodes`,
//! `descent_slack`, `dissipation_slack`. Floats are written in shortest
//! round-trip form; empty cells mean "not applicable" (the final row has no
//! input).

use super::SimState;
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetupKind {
    TokenBucket,
    Actuator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    /// `[x_p; u_s]` or `x_p`.
    pub state: Vec<f64>,
    pub beta: Option<i64>,
    pub input: Option<Vec<f64>>,
    /// `γ(k)` or `σ(k)`.
    pub schedule: Option<usize>,
    pub v_star: Option<f64>,
    pub stage_cost: Option<f64>,
    pub solve_ms: Option<f64>,
    pub nodes: Option<usize>,
    /// `V*(k+1) − V*(k) + ℓ(k)`.
    pub descent_slack: Option<f64>,
    /// `ℓ(k) + λ(x(k)) − λ(x(k+1))`.
    pub dissipation_slack: Option<f64>,
}

impl TraceRow {
    pub fn state_only(k: usize, x: &SimState) -> Self {
        TraceRow {
            k,
            state: x.vector().iter().copied().collect(),
            beta: x.beta(),
            input: None,
            schedule: None,
            v_star: None,
            stage_cost: None,
            solve_ms: None,
            nodes: None,
            descent_slack: None,
            dissipation_slack: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopTrace {
    pub setup: SetupKind,
    pub state_dim: usize,
    pub input_dim: usize,
    pub rows: Vec<TraceRow>,
}

fn opt<T: std::fmt::Debug>(v: &Option<T>) -> String {
    v.as_ref().map(|x| format!("{x:?}")).unwrap_or_default()
}

fn parse_opt<T: std::str::FromStr>(s: &str, col: &str, line: usize) -> Result<Option<T>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::Config(format!("trace line {line}: cannot parse column '{col}' value '{s}'")))
}

const TAIL: [&str; 7] = ["schedule", "V_star", "stage_cost", "solve_ms", "nodes", "descent_slack", "dissipation_slack"];

impl ClosedLoopTrace {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["k".to_string()];
        h.extend((0..self.state_dim).map(|i| format!("x{i}")));
        if self.setup == SetupKind::TokenBucket {
            h.push("beta".into());
        }
        h.extend((0..self.input_dim).map(|i| format!("u{i}")));
        h.extend(TAIL.iter().map(|s| s.to_string()));
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.header())?;
        for r in &self.rows {
            let mut rec = vec![r.k.to_string()];
            rec.extend(r.state.iter().map(|v| format!("{v:?}")));
            if self.setup == SetupKind::TokenBucket {
                rec.push(opt(&r.beta));
            }
            match &r.input {
                Some(u) => rec.extend(u.iter().map(|v| format!("{v:?}"))),
                None => rec.extend(std::iter::repeat_n(String::new(), self.input_dim)),
            }
            rec.push(opt(&r.schedule));
            rec.push(opt(&r.v_star));
            rec.push(opt(&r.stage_cost));
            rec.push(opt(&r.solve_ms));
            rec.push(opt(&r.nodes));
            rec.push(opt(&r.descent_slack));
            rec.push(opt(&r.dissipation_slack));
            wr.write_record(rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
        let is_indexed = |h: &str, prefix: char| {
            h.strip_prefix(prefix).is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
        };
        let state_dim = header.iter().filter(|h| is_indexed(h, 'x')).count();
        let input_dim = header.iter().filter(|h| is_indexed(h, 'u')).count();
        let setup = if header.iter().any(|h| h == "beta") { SetupKind::TokenBucket } else { SetupKind::Actuator };
        let trace = ClosedLoopTrace { setup, state_dim, input_dim, rows: Vec::new() };
        if header != trace.header() {
            return Err(Error::Config(format!("unexpected trace header: {}", header.join(","))));
        }
        let mut rows = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let line = line + 2;
            let cell = |i: usize| rec.get(i).unwrap_or("");
            let mut i = 0;
            let k = parse_opt::<usize>(cell(i), "k", line)?
                .ok_or_else(|| Error::Config(format!("trace line {line}: missing k")))?;
            i += 1;
            let mut state = Vec::with_capacity(state_dim);
            for j in 0..state_dim {
                state.push(
                    parse_opt::<f64>(cell(i), &header[i], line)?
                        .ok_or_else(|| Error::Config(format!("trace line {line}: missing x{j}")))?,
                );
                i += 1;
            }
            let beta = if setup == SetupKind::TokenBucket {
                i += 1;
                parse_opt::<i64>(cell(i - 1), "beta", line)?
            } else {
                None
            };
            let mut input = Vec::with_capacity(input_dim);
            for _ in 0..input_dim {
                if let Some(v) = parse_opt::<f64>(cell(i), &header[i], line)? {
                    input.push(v);
                }
                i += 1;
            }
            let input = if input.len() == input_dim && input_dim > 0 { Some(input) } else { None };
            let schedule = parse_opt(cell(i), "schedule", line)?;
            let v_star = parse_opt(cell(i + 1), "V_star", line)?;
            let stage_cost = parse_opt(cell(i + 2), "stage_cost", line)?;
            let solve_ms = parse_opt(cell(i + 3), "solve_ms", line)?;
            let nodes = parse_opt(cell(i + 4), "nodes", line)?;
            let descent_slack = parse_opt(cell(i + 5), "descent_slack", line)?;
            let dissipation_slack = parse_opt(cell(i + 6), "dissipation_slack", line)?;
            rows.push(TraceRow {
                k,
                state,
                beta,
                input,
                schedule,
                v_star,
                stage_cost,
                solve_ms,
                nodes,
                descent_slack,
                dissipation_slack,
            });
        }
        Ok(ClosedLoopTrace { rows, ..trace })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ClosedLoopTrace::read_csv(std::fs::File::open(path)?)
    }

    /// The trace without its timing columns, for determinism checks.
    pub fn without_timing(&self) -> Self {
        let mut t = self.clone();
        for r in &mut t.rows {
            r.solve_ms = None;
        }
        t
    }

    /// One `k,value` CSV per signal, named after the trace column.
    pub fn write_series(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        let mut rd = csv::Reader::from_reader(buf.as_slice());
        let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
        let records: Vec<csv::StringRecord> = rd.records().collect::<std::result::Result<_, _>>()?;
        let mut written = Vec::new();
        for (c, name) in header.iter().enumerate().skip(1) {
            let path = dir.join(format!("{name}.csv"));
            let mut wr = csv::Writer::from_path(&path)?;
            wr.write_record(["k", name.as_str()])?;
            for rec in &records {
                let v = rec.get(c).unwrap_or("");
                if !v.is_empty() {
                    wr.write_record([rec.get(0).unwrap_or(""), v])?;
                }
            }
            wr.flush()?;
            written.push(path);
        }
        Ok(written)
    }
}
