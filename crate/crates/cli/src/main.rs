//! `frd`: build, verify, sample and sweep finite range decompositions from a TOML config.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Ctx;
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "frd", version, about = "Finite range decompositions of lattice Green's functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Multiplies every asserted tolerance.
    #[arg(long, global = true, default_value_t = 1.0)]
    tol_scale: f64,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Build the decomposition and export every scale.
    Decompose,
    /// Run the bound suites for the configured kind.
    Verify,
    /// Draw Gaussian samples of one scale and check covariances.
    Sample,
    /// Localization, derivative, Hilbert-Schmidt, smoothness and moment suites.
    Renorm,
    /// Repeat over levels N and fit growth.
    Sweep,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Decompose => "decompose",
            Self::Verify => "verify",
            Self::Sample => "sample",
            Self::Renorm => "renorm",
            Self::Sweep => "sweep",
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    if !(cli.tol_scale > 0.0 && cli.tol_scale.is_finite()) {
        anyhow::bail!("--tol-scale must be positive, got {}", cli.tol_scale);
    }
    cfg.validate()?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("frd-out"));
    let ctx = Ctx { cfg: &cfg, tol: cfg.tolerances.scaled(cli.tol_scale), tol_scale: cli.tol_scale, out: &out };
    let name = cli.command.name();
    let rep = frd::par::with_workers(cli.workers, || match cli.command {
        Command::Decompose => commands::decompose(&ctx),
        Command::Verify => commands::verify(&ctx),
        Command::Sample => commands::sample_cmd(&ctx),
        Command::Renorm => commands::renorm_cmd(&ctx),
        Command::Sweep => commands::sweep(&ctx),
    })?;
    output::write_report(&out, name, &cfg, &rep)?;
    output::print_summary(name, &rep);
    Ok(rep.all_pass())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
