//! `wdmcascade`: device synthesis, surrogate training, link simulation,
//! launch-profile optimization and evaluation from the command line.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use wdm_cascade::fiber::FiberModelKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] wdm_cascade::Error),
}

impl CliError {
    /// 3 for numerical failures, 2 for everything the user can fix.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "wdmcascade", version, about = "Differentiable WDM link simulation and launch-profile optimization")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GlobalOpts {
    /// Seed for every random stage of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Fiber model used for prediction: bulk or srs.
    #[arg(long, global = true, value_parser = parse_kind)]
    pub model: Option<FiberModelKind>,
    /// α multiplier inside the effective-length formula (1 or 2).
    #[arg(long, global = true, value_parser = parse_leff)]
    pub leff_alpha_factor: Option<f64>,
}

fn parse_kind(s: &str) -> Result<FiberModelKind, String> {
    s.parse().map_err(|e: wdm_cascade::Error| e.to_string())
}

fn parse_leff(s: &str) -> Result<f64, String> {
    match s.trim() {
        "1" | "1.0" => Ok(1.0),
        "2" | "2.0" => Ok(2.0),
        _ => Err(format!("expected 1 or 2, got `{s}`")),
    }
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Write a virtual EDFA device file, optionally perturbed.
    GenDevice {
        /// TOML file with device parameters; defaults otherwise.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        id: Option<String>,
        /// Perturb the parameters with this seed.
        #[arg(long)]
        perturb_seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Label random input profiles with a virtual device.
    GenDataset {
        #[arg(long)]
        device: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the gain surrogate.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Validation set; the last tenth of `dataset` otherwise.
        #[arg(long)]
        val: Option<PathBuf>,
        /// TOML file with training hyper-parameters.
        #[arg(long)]
        hyper: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Propagate a launch profile through a link.
    Simulate {
        #[arg(long)]
        link: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        /// Use the virtual devices instead of the surrogate.
        #[arg(long)]
        truth: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize the launch profile for a flat (or target) output.
    Optimize {
        #[arg(long)]
        link: PathBuf,
        #[arg(long)]
        opt_config: Option<PathBuf>,
    },
    /// Prediction-error sweeps and the baseline comparison.
    Evaluate {
        #[arg(long)]
        link: PathBuf,
        #[arg(long)]
        sweep_config: Option<PathBuf>,
        #[arg(long)]
        opt_config: Option<PathBuf>,
        #[arg(long)]
        skip_baselines: bool,
    },
    /// Write a batch of random-walk profiles.
    GenProfiles {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0.0)]
        min_excursion: f64,
        #[arg(long, default_value_t = 15.0)]
        max_excursion: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Devices, dataset, training, optimization and evaluation on the
    /// two-span link in one go.
    Demo {
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
        #[arg(long, default_value_t = 2_000)]
        val_samples: usize,
        #[arg(long, default_value_t = 200)]
        profiles: usize,
        #[arg(long, default_value_t = 200)]
        max_epochs: usize,
    },
    /// Re-run the command recorded in a manifest.
    Replay { manifest: PathBuf },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenDevice { .. } => "gen-device",
            Command::GenDataset { .. } => "gen-dataset",
            Command::Train { .. } => "train",
            Command::Simulate { .. } => "simulate",
            Command::Optimize { .. } => "optimize",
            Command::Evaluate { .. } => "evaluate",
            Command::GenProfiles { .. } => "gen-profiles",
            Command::Demo { .. } => "demo",
            Command::Replay { .. } => "replay",
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Replay { manifest } = &cli.command {
        let replayed = manifest::replay_cli(manifest, &cli.global)?;
        return run(replayed);
    }
    std::fs::create_dir_all(&cli.global.out_dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", cli.global.out_dir.display())))?;
    let start = Instant::now();
    let global = cli.global.clone();
    let command = cli.command.clone();
    let outcome = wdm_cascade::eval::with_workers(global.workers, move || commands::execute(&global, &command))??;
    manifest::write(&cli, &outcome, start.elapsed())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
