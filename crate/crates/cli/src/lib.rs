//! Command-line front end: synthesis, closed-loop simulation, certificate
//! checks, the solve-time benchmark and plot data export.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 infeasible (or
//! unsolvable) problem, 3 certificate violation.

use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use tvmpc::mpc::MpcMode;
use tvmpc::sim::{
    benchmark_configs, check_certificates, run_benchmark, run_closed_loop, ClosedLoopTrace, Controller, Experiment,
    ExperimentConfig, DESCENT_TOL,
};
use tvmpc::synthesis::{parameter_hash, Certificate, ModelParams};
use tvmpc::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_CERTIFICATE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "tvmpc", version, about = "Periodic time-varying MPC for networked control")]
struct Cli {
    /// Seed for randomized data; every current subcommand is deterministic,
    /// so the seed is only recorded in the log.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize and verify the terminal ingredients, write a certificate.
    Synthesize {
        config: PathBuf,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
    },
    /// Run the closed loop and write the trace.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        cert: PathBuf,
        #[arg(long, default_value_t = 60)]
        steps: usize,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
    },
    /// Re-check a certificate and, optionally, a trace against it.
    Verify {
        #[arg(long)]
        cert: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Descent tolerance.
        #[arg(long, default_value_t = DESCENT_TOL)]
        eps: f64,
    },
    /// Time the MPC solve over several horizons in both modes.
    Benchmark {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10,12")]
        horizons: Vec<usize>,
        /// Reuse a certificate instead of synthesizing.
        #[arg(long)]
        cert: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
    },
    /// Split a trace into one `k,value` CSV per signal.
    Plotdata {
        trace: PathBuf,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
    },
}

/// A failure together with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InfeasibleProblem(_)
            | Error::SdpInfeasible(_)
            | Error::NotInTerminalSet(_)
            | Error::InsufficientTokens { .. }
            | Error::Solver(_)
            | Error::NotConverged(_)
            | Error::Unbounded => EXIT_INFEASIBLE,
            Error::VerificationFailed { .. } => EXIT_CERTIFICATE,
            Error::InvalidMatrix(_) | Error::InvalidModel(_) | Error::Config(_) | Error::Io(_) => EXIT_CONFIG,
        };
        Failure { code, msg: e.to_string() }
    }
}

type CliResult = std::result::Result<(), Failure>;

fn load_experiment(path: &Path) -> std::result::Result<Experiment, Failure> {
    Ok(ExperimentConfig::load(path)?.build()?)
}

/// Loads a certificate and makes sure it was issued for `model`.
fn load_certificate(path: &Path, model: Option<&ModelParams>) -> std::result::Result<Certificate, Failure> {
    let cert = Certificate::load(path)?;
    if let Some(m) = model {
        if parameter_hash(m) != cert.param_hash {
            return Err(Failure {
                code: EXIT_CONFIG,
                msg: format!("certificate {} was issued for different model parameters", path.display()),
            });
        }
    }
    Ok(cert)
}

fn print_margins(margins: &[f64], excess: &[f64]) {
    for (j, m) in margins.iter().enumerate() {
        println!("margin[{j}] = {m:.6e}");
    }
    for (j, e) in excess.iter().enumerate() {
        println!("inclusion_excess[{j}] = {e:.6e}");
    }
}

fn synthesize(config: &Path, output: &Path) -> CliResult {
    let exp = load_experiment(config)?;
    let s = exp.model.synthesize(exp.region_mode, &exp.synthesis)?;
    let cert = Certificate::new(exp.model, s);
    print_margins(&cert.margins, &cert.inclusion_excess);
    println!("sdp_margin = {:.6e}", cert.sdp_margin);
    cert.save(output)?;
    println!("certificate written to {}", output.display());
    Ok(())
}

fn simulate(config: &Path, cert: &Path, steps: usize, output: &Path) -> CliResult {
    let exp = load_experiment(config)?;
    let cert = load_certificate(cert, Some(&exp.model))?;
    let mut ctl = Controller::new(&exp.model, &cert.ingredients, &exp.mpc)?;
    let trace = run_closed_loop(&mut ctl, &exp.initial, steps)?;
    trace.save(output)?;
    let last = trace.rows.last().expect("trace holds the initial state");
    let norm = last.state.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("{} steps, final state norm {norm:.3e}", steps);
    println!("trace written to {}", output.display());
    Ok(())
}

fn verify(cert: &Path, trace: Option<&Path>, eps: f64) -> CliResult {
    let cert = load_certificate(cert, None)?;
    let check = cert.check()?;
    println!("hash_matches = {}", check.hash_matches);
    print_margins(&check.margins, &check.inclusion_excess);
    let mut ok = check.passed();
    if let Some(path) = trace {
        let t = ClosedLoopTrace::load(path)?;
        let r = check_certificates(&t, &cert.ingredients, &cert.params, eps)?;
        println!("max_descent_slack = {:.6e}", r.max_descent());
        println!("min_dissipation_slack = {:.6e}", r.min_dissipation());
        let bad = r.descent_violations();
        if !bad.is_empty() {
            println!("descent violated at steps {bad:?}");
        }
        ok &= r.passed();
    }
    if ok {
        println!("certificate OK");
        Ok(())
    } else {
        Err(Failure { code: EXIT_CERTIFICATE, msg: "certificate violated".into() })
    }
}

fn benchmark(config: &Path, horizons: &[usize], cert: Option<&Path>, repetitions: usize, output: &Path) -> CliResult {
    let exp = load_experiment(config)?;
    let ing = match cert {
        Some(c) => load_certificate(c, Some(&exp.model))?.ingredients,
        None => exp.model.synthesize(exp.region_mode, &exp.synthesis)?.ingredients,
    };
    let mut horizons = horizons.to_vec();
    horizons.sort_unstable_by(|a, b| b.cmp(a));
    horizons.dedup();
    let configs = benchmark_configs(&exp.mpc, &horizons, exp.model.period());
    let table = run_benchmark(&exp.model, &ing, &configs, &exp.initial, repetitions);
    for r in &table.rows {
        let mode = if r.mode == MpcMode::TimeVarying { "time_varying" } else { "multi_step" };
        match (r.mean_seconds, r.relative) {
            (Some(t), Some(rel)) => println!("{mode:>12} N={:<3} {:10.3} ms {:7.1} %", r.horizon, t * 1e3, rel * 100.0),
            _ => println!("{mode:>12} N={:<3} failed: {}", r.horizon, r.error.as_deref().unwrap_or("?")),
        }
    }
    table.write_csv(std::fs::File::create(output).map_err(Error::from)?)?;
    println!("table written to {}", output.display());
    Ok(())
}

fn plotdata(trace: &Path, output: &Path) -> CliResult {
    let t = ClosedLoopTrace::load(trace)?;
    let files = t.write_series(output)?;
    println!("{} series written to {}", files.len(), output.display());
    Ok(())
}

/// Runs the CLI on `argv` (including the program name) and returns the exit
/// code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    log::debug!("seed = {}", cli.seed);
    let res = match &cli.command {
        Command::Synthesize { config, output } => synthesize(config, output),
        Command::Simulate { config, cert, steps, output } => simulate(config, cert, *steps, output),
        Command::Verify { cert, trace, eps } => verify(cert, trace.as_deref(), *eps),
        Command::Benchmark { config, horizons, cert, repetitions, output } => {
            benchmark(config, horizons, cert.as_deref(), *repetitions, output)
        }
        Command::Plotdata { trace, output } => plotdata(trace, output),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            f.code
        }
    }
}
