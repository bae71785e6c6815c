#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use affine_ltf::factorization::FixedPointOptions;
use affine_ltf::riccati::Tolerances;
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::commands::{FactorizeArgs, Output, SimulateArgs};
use crate::config::{ModelConfig, Resolved};
use crate::error::CliError;

/// Default directory for CSV output when `--out` is not given.
const OUT_DIR_ENV: &str = "AFFINE_LTF_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "affine-ltf", version, about = "Long-term factorization of affine pricing kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON model configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in model: cir, cir-degenerate, vasicek, gaussian-nonreverting, breeden, bhs, bhs-printed.
    #[arg(long)]
    preset: Option<String>,
    /// CSV output path (default: $AFFINE_LTF_OUT_DIR/<command>.csv, else stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-10)]
    tol_abs: f64,
    #[arg(long, default_value_t = 1e-10)]
    tol_rel: f64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the admissibility conditions.
    Check {
        #[command(flatten)]
        common: Common,
    },
    /// Risk-neutral and long-term factorization, with the Riccati trajectory as CSV.
    Factorize {
        #[command(flatten)]
        common: Common,
        /// Trajectory length (default: time the flow took to settle).
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 201)]
        points: usize,
    },
    /// Zero-coupon prices and yields.
    Curve {
        #[command(flatten)]
        common: Common,
        /// State, comma-separated (default: config x0).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
        /// Maturities, comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        maturities: Vec<f64>,
    },
    /// Monte Carlo martingale tests for the factorization densities.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, default_value_t = 0.004)]
        dt: f64,
        /// Test date.
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
        /// Skip the long-term martingale (only the risk-neutral density is tested).
        #[arg(long)]
        no_long_term: bool,
    },
    /// Holding-period returns of long bonds against the long bond.
    Convergence {
        #[command(flatten)]
        common: Common,
        /// Holding period.
        #[arg(long, default_value_t = 12.0)]
        t: f64,
        /// Remaining maturities after the holding period, comma-separated.
        #[arg(long = "T", value_delimiter = ',', required = true)]
        periods: Vec<f64>,
        /// State (default: stationary mean under P, else config x0).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Check { .. } => "check",
            Command::Factorize { .. } => "factorize",
            Command::Curve { .. } => "curve",
            Command::Simulate { .. } => "simulate",
            Command::Convergence { .. } => "convergence",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Check { common }
            | Command::Factorize { common, .. }
            | Command::Curve { common, .. }
            | Command::Simulate { common, .. }
            | Command::Convergence { common, .. } => common,
        }
    }
}

fn load_config(common: &Common) -> Result<ModelConfig, CliError> {
    match (&common.config, &common.preset) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
            ModelConfig::parse(&text)
        }
        (None, Some(name)) => Ok(ModelConfig::preset(name)),
        _ => Err(CliError::Input("exactly one of --config or --preset is required".into())),
    }
}

/// Explicit state, else a default: the config's x0 before the stationary mean,
/// or the other way round when `prefer_stationary` is set.
fn state(r: &Resolved, given: &Option<Vec<f64>>, prefer_stationary: bool) -> Result<DVector<f64>, CliError> {
    let x = match given {
        Some(v) => DVector::from_vec(v.clone()),
        None => {
            let (first, second) = if prefer_stationary {
                (r.model.stationary_mean(), r.x0.clone())
            } else {
                (r.x0.clone(), r.model.stationary_mean())
            };
            first
                .or(second)
                .ok_or_else(|| CliError::Input("no state given and no default state exists".into()))?
        }
    };
    if x.len() != r.model.dim() {
        return Err(CliError::Input(format!(
            "state has {} entries, model dimension is {}",
            x.len(),
            r.model.dim()
        )));
    }
    Ok(x)
}

fn run(cmd: &Command, cfg: &ModelConfig) -> Result<Output, CliError> {
    let r = cfg.resolve()?;
    let common = cmd.common();
    if !(common.tol_abs > 0.0 && common.tol_rel > 0.0) {
        return Err(CliError::Input("tolerances must be positive".into()));
    }
    let opts = FixedPointOptions {
        tol: Tolerances {
            abs: common.tol_abs,
            rel: common.tol_rel,
        },
        ..Default::default()
    };
    match cmd {
        Command::Check { .. } => Ok(commands::check(&r)),
        Command::Factorize { horizon, points, .. } => commands::factorize(
            &r,
            &opts,
            &FactorizeArgs {
                horizon: *horizon,
                points: *points,
            },
        ),
        Command::Curve { x, maturities, .. } => commands::curve(&r, &opts, &state(&r, x, false)?, maturities),
        Command::Simulate {
            seed,
            paths,
            dt,
            horizon,
            x,
            no_long_term,
            ..
        } => commands::simulate_cmd(
            &r,
            &opts,
            &state(&r, x, false)?,
            &SimulateArgs {
                paths: *paths,
                dt: *dt,
                horizon: *horizon,
                seed: *seed,
                long_term: !no_long_term,
            },
        ),
        Command::Convergence { t, periods, x, .. } => {
            commands::convergence(&r, &opts, &state(&r, x, true)?, *t, periods)
        }
    }
}

fn provenance(cmd: &Command, cfg: &ModelConfig) -> Value {
    let hash = Sha256::digest(cfg.to_json().as_bytes());
    let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
    let seed = match cmd {
        Command::Simulate { seed, .. } => json!(seed),
        _ => Value::Null,
    };
    let time_unit = cfg.resolve().ok().map(|r| r.model.time_unit().to_string());
    json!({
        "tool": "affine-ltf",
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": hex,
        "seed": seed,
        "time_unit": time_unit,
    })
}

fn csv_destination(cmd: &Command) -> Option<PathBuf> {
    if let Some(p) = &cmd.common().out {
        return Some(p.clone());
    }
    std::env::var_os(OUT_DIR_ENV).map(|dir| PathBuf::from(dir).join(format!("{}.csv", cmd.name())))
}

fn emit(cmd: &Command, cfg: &ModelConfig, out: Output) -> Result<u8, CliError> {
    let mut report = provenance(cmd, cfg);
    report["command"] = json!(cmd.name());
    if let Value::Object(fields) = out.report {
        for (k, v) in fields {
            report[k] = v;
        }
    }
    let mut report_to_stdout = true;
    if let Some(csv) = &out.csv {
        match csv_destination(cmd) {
            Some(path) => {
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent)?;
                }
                std::fs::write(&path, csv)?;
                report["csv"] = json!(path.display().to_string());
            }
            None => {
                print!("{csv}");
                report_to_stdout = false;
            }
        }
    }
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    if report_to_stdout {
        println!("{text}");
    } else {
        eprintln!("{text}");
    }
    std::io::stdout().flush()?;
    Ok(out.exit)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load_config(cli.command.common()).and_then(|cfg| {
        let out = run(&cli.command, &cfg)?;
        emit(&cli.command, &cfg, out)
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
