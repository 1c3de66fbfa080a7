use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use spatial_bd::certificate::Certificate;
use spatial_bd::config::RunConfig;
use spatial_bd::oracles::NormBoundInput;
use spatial_bd::Error;
use spatial_bd_cli::{self as cli, BoundVariant};

const EXIT_USAGE: u8 = 2;
const EXIT_CHECK: u8 = 3;
const EXIT_EXPLOSION: u8 = 4;

#[derive(Parser)]
#[command(name = "sbd", version, about = "Spatial birth-and-death simulation and self-regulation certificates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Overrides the configured replica count.
    #[arg(long, value_name = "N")]
    replicas: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Recompute rate caches periodically and fail on drift.
    #[arg(long)]
    audit: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Bp,
    Migration,
}

#[derive(Subcommand)]
enum Command {
    /// Run replicas and write traces and statistics.
    Simulate(Common),
    /// Search for a certificate and check it on sampled configurations.
    Certify(Common),
    /// Check a certificate on sampled configurations.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Certificate JSON written by `certify`; computed afresh if absent.
        #[arg(long, value_name = "PATH")]
        certificate: Option<PathBuf>,
    },
    /// Evaluate the operator-norm bounds.
    Bounds {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        #[arg(long, allow_hyphen_values = true)]
        theta: f64,
        #[arg(long, allow_hyphen_values = true)]
        theta_prime: f64,
        #[arg(long)]
        a_plus_mass: Option<f64>,
        #[arg(long)]
        a_plus_sup: Option<f64>,
        #[arg(long)]
        a_minus_mass: Option<f64>,
        #[arg(long)]
        a_minus_sup: Option<f64>,
        #[arg(long)]
        b_sup: Option<f64>,
    },
    /// Recompute statistics from a finished run directory.
    Analyze(Common),
}

enum Failure {
    Usage(String),
    Check(String),
    Explosion(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::InvalidArgument(_) | Error::InvalidKernel(_) | Error::InvalidTorus(_) => {
                Failure::Usage(e.to_string())
            }
            Error::DimensionMismatch { .. } | Error::KernelTooWide { .. } => Failure::Usage(e.to_string()),
            Error::NoCompetitionInReach => Failure::Check(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

fn load(common: &Common) -> Result<RunConfig, Failure> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("--config PATH is required".into()))?;
    let mut cfg = RunConfig::from_path(path)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(r) = common.replicas {
        cfg.replicas = r;
    }
    if let Some(o) = &common.out {
        cfg.output = Some(o.clone());
    }
    Ok(cfg.resolve()?)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn emit<T: Serialize>(value: &T, file: Option<&Path>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Other(e.to_string()))?;
    if let Some(path) = file {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Failure::Other(e.to_string()))?;
        }
        fs::write(path, format!("{text}\n")).map_err(|e| Failure::Other(e.to_string()))?;
    }
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(common) => {
            let cfg = load(&common)?;
            let out = out_dir(&cfg);
            let report = cli::simulate(&cfg, &out, common.audit)?;
            for c in &report.checks {
                eprintln!("{}: {} ({})", c.name, if c.passed { "pass" } else { "FAIL" }, c.detail);
            }
            eprintln!("report: {}", out.join(cli::REPORT).display());
            if report.explosion {
                return Err(Failure::Explosion("population exceeded max_population; partial report written".into()));
            }
            if !report.all_passed() {
                return Err(Failure::Check("acceptance check failed".into()));
            }
            Ok(())
        }
        Command::Analyze(common) => {
            let out = common
                .out
                .clone()
                .ok_or_else(|| Failure::Usage("--out DIR (a finished run directory) is required".into()))?;
            let cfg = match &common.config {
                Some(_) => Some(load(&common)?),
                None => None,
            };
            let report = cli::analyze(&out, cfg)?;
            for c in &report.checks {
                eprintln!("{}: {} ({})", c.name, if c.passed { "pass" } else { "FAIL" }, c.detail);
            }
            if report.explosion {
                return Err(Failure::Explosion("run contains replicas stopped by the population guard".into()));
            }
            if !report.all_passed() {
                return Err(Failure::Check("acceptance check failed".into()));
            }
            Ok(())
        }
        Command::Certify(common) => {
            let cfg = load(&common)?;
            let result = cli::certify(&cfg)?;
            emit(&result, common.out.as_ref().map(|d| d.join("certificate.json")).as_deref())?;
            if result.passed {
                Ok(())
            } else {
                Err(Failure::Check(format!(
                    "certificate rejected: theta = {}, {} violations",
                    result.certificate.theta, result.verification.violations
                )))
            }
        }
        Command::Verify { common, certificate } => {
            let cfg = load(&common)?;
            let stored: Option<Certificate> = match certificate {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
                    let value: serde_json::Value =
                        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
                    // accept both a bare certificate and certify's output
                    let inner = value.get("certificate").cloned().unwrap_or(value);
                    Some(serde_json::from_value(inner).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?)
                }
                None => None,
            };
            let result = cli::verify(&cfg, stored, common.out.as_deref())?;
            emit(&result, common.out.as_ref().map(|d| d.join("violations.json")).as_deref())?;
            if result.passed {
                Ok(())
            } else if let Some(m) = result.audit_error {
                Err(Failure::Check(format!("stored certificate is inconsistent: {m}")))
            } else {
                Err(Failure::Check(format!(
                    "{} violations, min U = {}",
                    result.verification.violations, result.verification.min_u
                )))
            }
        }
        Command::Bounds {
            common,
            variant,
            theta,
            theta_prime,
            a_plus_mass,
            a_plus_sup,
            a_minus_mass,
            a_minus_sup,
            b_sup,
        } => {
            let (from_model, mut inputs) = match &common.config {
                Some(_) => {
                    let (v, i) = cli::model_functionals(&load(&common)?.model);
                    (Some(v), i)
                }
                None => (None, NormBoundInput::default()),
            };
            let variant = match (variant, from_model) {
                (Some(VariantArg::Bp), _) => BoundVariant::BolkerPacala,
                (Some(VariantArg::Migration), _) => BoundVariant::Migration,
                (None, Some(v)) => v,
                (None, None) => return Err(Failure::Usage("--variant or --config is required".into())),
            };
            inputs.theta = theta;
            inputs.theta_prime = theta_prime;
            let set = |slot: &mut f64, v: Option<f64>| {
                if let Some(v) = v {
                    *slot = v;
                }
            };
            set(&mut inputs.dispersal_mass, a_plus_mass);
            set(&mut inputs.dispersal_sup, a_plus_sup);
            set(&mut inputs.competition_mass, a_minus_mass);
            set(&mut inputs.competition_sup, a_minus_sup);
            set(&mut inputs.immigration_sup, b_sup);
            let result = cli::bounds(variant, inputs)?;
            emit(&result, common.out.as_ref().map(|d| d.join("bounds.json")).as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Usage(m) => (EXIT_USAGE, m),
                Failure::Check(m) => (EXIT_CHECK, m),
                Failure::Explosion(m) => (EXIT_EXPLOSION, m),
                Failure::Other(m) => (1, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
