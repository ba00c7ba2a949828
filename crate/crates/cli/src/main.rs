//! `dpac`: design noise plans, run trials, sweep parameters, check conditions.
//!
//! Exit codes: 0 ok, 1 consensus did not converge, 2 invalid flags or
//! configuration (or any other error), 3 privacy condition violated.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dpac::consensus::Arithmetic as CoreArithmetic;
use dpac::experiments::{emit, run_trial_on, sweep, ExperimentConfig, SweepParam};
use dpac::privacy::{check_condition, design, predict_mse, Algorithm, DesignParameter, PrivacyBudget};
use dpac::{Network, ShuffleBackend};
use serde_json::json;

#[derive(Parser)]
#[command(name = "dpac", version, about = "Differentially private average consensus")]
struct Cli {
    /// Worker threads for Monte Carlo trials.
    #[arg(long, global = true, env = "DP_CONSENSUS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the noise plan for a privacy budget.
    Design(DesignArgs),
    /// Run one trial of a config.
    Run(RunArgs),
    /// Monte Carlo sweep over one parameter; writes CSV and JSON.
    Sweep(SweepArgs),
    /// Evaluate the privacy condition of a config's plan.
    Check(CheckArgs),
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long)]
    algorithm: Algorithm,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long)]
    mu: f64,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1e4)]
    abar: f64,
    #[arg(long, conflicts_with = "h")]
    g: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Paillier,
    Plaintext,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arith {
    Float,
    Split,
    Rational,
}

/// Flags that override values from the config file.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    g: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    backend: Option<Backend>,
    #[arg(long)]
    key_bits: Option<u64>,
    #[arg(long)]
    arithmetic: Option<Arith>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Overrides,
    /// Write every message as a JSON line to this file.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Overrides,
    /// One of g, h, epsilon, n.
    #[arg(long)]
    param: String,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// File stem; defaults to `sweep-<param>`.
    #[arg(long)]
    stem: Option<String>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    common: Overrides,
}

enum Failure {
    Unconverged,
    Usage(String),
    Violation,
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Design(a) => cmd_design(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Check(a) => cmd_check(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Unconverged) => {
            eprintln!("consensus did not converge");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Violation) => {
            eprintln!("privacy condition violated");
            ExitCode::from(3)
        }
    }
}

fn print_json(v: &serde_json::Value) -> CliResult {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn design_param(alg: Algorithm, g: Option<f64>, h: Option<f64>) -> Result<Option<DesignParameter>, Failure> {
    match (alg, g, h) {
        (Algorithm::DishufGaussian, Some(g), None) => Ok(Some(DesignParameter::G(g))),
        (Algorithm::DishufGaussian, _, _) => Err(Failure::Usage("dishuf-gaussian needs --g (and not --h)".into())),
        (Algorithm::DishufLaplace, None, Some(h)) => Ok(Some(DesignParameter::H(h))),
        (Algorithm::DishufLaplace, _, _) => Err(Failure::Usage("dishuf-laplace needs --h (and not --g)".into())),
        (_, None, None) => Ok(None),
        (other, _, _) => Err(Failure::Usage(format!("{other} takes neither --g nor --h"))),
    }
}

fn cmd_design(a: DesignArgs) -> CliResult {
    let param = design_param(a.algorithm, a.g, a.h)?;
    if !(a.abar >= 1.0 && a.abar.is_finite()) {
        return Err(Failure::Usage(format!("abar must be at least 1, got {}", a.abar)));
    }
    let budget = PrivacyBudget::new(a.epsilon, a.delta, a.mu)?;
    let plan = design(a.algorithm, &budget, a.n, a.abar, param)?;
    let predicted = predict_mse(&plan, a.n, a.algorithm)?;
    let g_or_h = match param {
        Some(DesignParameter::G(v)) | Some(DesignParameter::H(v)) => Some(v),
        None => None,
    };
    let mut out = json!({
        "algorithm": a.algorithm.name(),
        "family": plan.family,
        "sigma_gamma": plan.sigma_gamma,
        "sigma_eta": plan.sigma_eta,
        "sigma_xi": plan.sigma_xi,
        "g_or_h": g_or_h,
        "predicted_mse": predicted,
    });
    if a.algorithm.is_dishuf() {
        out["condition"] = serde_json::to_value(check_condition(&plan, &budget, a.n, a.abar)?)?;
    }
    if !plan.warnings.is_empty() {
        out["warnings"] = json!(plan.warnings);
    }
    print_json(&out)
}

/// Loads the config and applies flag overrides. Draws a seed if none is set.
fn load(o: &Overrides) -> Result<ExperimentConfig, Failure> {
    let mut c = ExperimentConfig::from_path(&o.config)?;
    if let Some(s) = o.seed {
        c.run.seed = Some(s);
    }
    if c.run.seed.is_none() {
        let s: u64 = rand::random();
        eprintln!("seed: {s}");
        c.run.seed = Some(s);
    }
    if o.g.is_some() {
        c.algorithm.g = o.g;
    }
    if o.h.is_some() {
        c.algorithm.h = o.h;
    }
    if let Some(b) = o.backend {
        c.paillier.backend = match b {
            Backend::Paillier => ShuffleBackend::Paillier,
            Backend::Plaintext => ShuffleBackend::Plaintext,
        };
    }
    if let Some(k) = o.key_bits {
        c.paillier.key_bits = k;
    }
    if let Some(a) = o.arithmetic {
        c.run.arithmetic = match a {
            Arith::Float => CoreArithmetic::Float,
            Arith::Split => CoreArithmetic::Split,
            Arith::Rational => CoreArithmetic::Rational,
        };
    }
    Ok(c)
}

fn cmd_run(a: RunArgs) -> CliResult {
    let config = load(&a.common)?;
    let prepared = config.prepare()?;
    let mut net = Network::without_capture(prepared.graph.clone());
    if let Some(path) = &a.transcript {
        net = net.with_sink(Box::new(BufWriter::new(File::create(path)?)));
    }
    let detail = run_trial_on(&prepared, 0, &mut net, true)?;
    net.flush()?;
    let r = &detail.result;
    print_json(&json!({
        "seed": prepared.config.seed(),
        "algorithm": r.algorithm.name(),
        "n": prepared.n(),
        "d_star": prepared.d_star,
        "mse_theory": prepared.theory()?,
        "converged": r.converged,
        "iterations": r.iterations,
        "rounds": net.round(),
        "sq_error": r.sq_error,
        "network_error": r.network_error,
        "final_state": r.final_state,
    }))?;
    if r.converged {
        Ok(())
    } else {
        Err(Failure::Unconverged)
    }
}

fn cmd_sweep(a: SweepArgs) -> CliResult {
    let param: SweepParam = a.param.parse()?;
    let mut config = load(&a.common)?;
    if let Some(t) = a.trials {
        config.run.trials = t;
    }
    let rows = sweep(&config, param, &a.values)?;
    let stem = a.stem.clone().unwrap_or_else(|| format!("sweep-{}", param.name()));
    emit(&rows, &a.out, &stem)?;
    let mut out = io::stdout().lock();
    writeln!(out, "{:<16} {:>8} {:>8} {:>12} {:>12} {:>12}", "algorithm", param.name(), "trials", "mse", "se", "theory")?;
    for row in &rows {
        let value = row.param_value.map_or_else(|| "-".to_string(), |v| v.to_string());
        match (&row.summary, &row.error) {
            (Some(s), _) => writeln!(
                out,
                "{:<16} {:>8} {:>8} {:>12.6} {:>12.6} {:>12.6}",
                row.algorithm.name(),
                value,
                s.trials,
                s.mse_mean,
                s.mse_se,
                s.mse_theory
            )?,
            (None, Some(e)) => writeln!(out, "{:<16} {:>8} error: {e}", row.algorithm.name(), value)?,
            (None, None) => {}
        }
    }
    Ok(())
}

fn cmd_check(a: CheckArgs) -> CliResult {
    let config = load(&a.common)?;
    let prepared = config.prepare()?;
    let report = prepared.condition()?;
    print_json(&json!({
        "algorithm": prepared.algorithm().name(),
        "sigma_gamma": prepared.plan.sigma_gamma,
        "sigma_eta": prepared.plan.sigma_eta,
        "holds": report.holds,
        "lhs": report.lhs,
        "rhs": report.rhs,
        "margin": report.margin,
        "h_star": report.h_star,
    }))?;
    if report.holds {
        Ok(())
    } else {
        Err(Failure::Violation)
    }
}
