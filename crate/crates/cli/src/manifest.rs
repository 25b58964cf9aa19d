//! One JSON manifest per run, recording what is needed to regenerate its
//! outputs.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Parser;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::commands::Outcome;
use crate::{Cli, CliError, GlobalOpts};

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Command-line arguments after the program name.
    pub args: Vec<String>,
    /// Working directory the arguments are relative to.
    pub cwd: PathBuf,
    pub seed: u64,
    pub workers: Option<usize>,
    pub config: Value,
    pub versions: Value,
    pub outputs: Vec<PathBuf>,
    pub duration_s: f64,
}

pub fn manifest_path(out_dir: &Path, command: &str) -> PathBuf {
    out_dir.join(format!("manifest-{command}.json"))
}

pub fn write(cli: &Cli, outcome: &Outcome, elapsed: Duration) -> Result<(), CliError> {
    let out_dir = &cli.global.out_dir;
    let args = std::env::args().skip(1).collect();
    let cwd = std::env::current_dir().map_err(|e| CliError::Input(format!("cannot read working directory: {e}")))?;
    let outputs = outcome
        .outputs
        .iter()
        .map(|p| p.strip_prefix(out_dir).map(Path::to_path_buf).unwrap_or_else(|_| p.clone()))
        .collect();
    let m = RunManifest {
        command: cli.command.name().to_string(),
        args,
        cwd,
        seed: cli.global.seed.unwrap_or(0),
        workers: cli.global.workers,
        config: outcome.config.clone(),
        versions: serde_json::json!({
            "wdm-cascade": wdm_cascade::VERSION,
            "wdmcascade": env!("CARGO_PKG_VERSION"),
        }),
        outputs,
        duration_s: elapsed.as_secs_f64(),
    };
    let path = manifest_path(out_dir, &m.command);
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

/// Parses the recorded command line again. Outputs go to the replay's
/// `--out-dir` when one is given, else to the recorded one.
pub fn replay_cli(path: &Path, current: &GlobalOpts) -> Result<Cli, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let m: RunManifest =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: bad manifest: {e}", path.display())))?;
    let mut cli = Cli::try_parse_from(std::iter::once("wdmcascade".to_string()).chain(m.args))
        .map_err(|e| CliError::Input(format!("{}: recorded arguments no longer parse: {e}", path.display())))?;
    let out_dir = if current.out_dir != Path::new(".") {
        absolute(&current.out_dir)?
    } else {
        m.cwd.join(&cli.global.out_dir)
    };
    std::env::set_current_dir(&m.cwd)
        .map_err(|e| CliError::Input(format!("cannot enter recorded directory {}: {e}", m.cwd.display())))?;
    cli.global.out_dir = out_dir;
    if current.workers.is_some() {
        cli.global.workers = current.workers;
    }
    Ok(cli)
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(p).map_err(|e| CliError::Input(format!("cannot resolve {}: {e}", p.display())))
}
