//! `coulomb-lab`: run Coulomb gas, jellium and Ginzburg-Landau experiments from the command line.

mod commands;
mod config;
mod error;
mod io;
mod output;
mod svg;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{is_reserved, read_config_file, Format, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "coulomb-lab", version, about = "Coulomb gas, jellium and Ginzburg-Landau experiments")]
struct Cli {
    /// Config file (INI-style `key = value` or a flat JSON object); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact formats, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    format: Option<Vec<Format>>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Args)]
struct Params {
    /// Verb parameters as KEY=VALUE.
    #[arg(value_name = "KEY=VALUE")]
    params: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Equilibrium measure on a cell grid.
    Equilibrium(Params),
    /// Splitting of the Coulomb energy of a point configuration.
    Energy(Params),
    /// Metropolis sampling of the Coulomb gas.
    Sample(Params),
    #[command(subcommand)]
    Jellium(JelliumCommand),
    #[command(subcommand)]
    Gl(GlCommand),
    /// Re-run a manifest and compare its CSV artifacts byte by byte.
    Reproduce { manifest: PathBuf },
}

#[derive(Debug, Subcommand)]
enum JelliumCommand {
    /// Periodic Green function at a point.
    Green(Params),
    /// Renormalized periodic energy.
    Energy(Params),
    /// Lattice energy over the fundamental domain.
    ScanLattices(Params),
    /// Minimize the periodic energy of n points.
    Minimize(Params),
}

#[derive(Debug, Subcommand)]
enum GlCommand {
    /// Energy of a Ginzburg-Landau state.
    Energy(Params),
    /// Vortex balls, lower bound and vorticity estimate.
    Vortices(Params),
    /// London equation with zero vorticity.
    London(Params),
    /// Obstacle problem and its coincidence set.
    Obstacle(Params),
    /// Energy splitting around the Meissner background.
    Split(Params),
}

impl Command {
    fn verb_and_params(&self) -> Option<(&'static str, &Params)> {
        Some(match self {
            Self::Equilibrium(p) => ("equilibrium", p),
            Self::Energy(p) => ("energy", p),
            Self::Sample(p) => ("sample", p),
            Self::Jellium(JelliumCommand::Green(p)) => ("jellium green", p),
            Self::Jellium(JelliumCommand::Energy(p)) => ("jellium energy", p),
            Self::Jellium(JelliumCommand::ScanLattices(p)) => ("jellium scan-lattices", p),
            Self::Jellium(JelliumCommand::Minimize(p)) => ("jellium minimize", p),
            Self::Gl(GlCommand::Energy(p)) => ("gl energy", p),
            Self::Gl(GlCommand::Vortices(p)) => ("gl vortices", p),
            Self::Gl(GlCommand::London(p)) => ("gl london", p),
            Self::Gl(GlCommand::Obstacle(p)) => ("gl obstacle", p),
            Self::Gl(GlCommand::Split(p)) => ("gl split", p),
            Self::Reproduce { .. } => return None,
        })
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut map = match &cli.config {
        Some(path) => read_config_file(path)?,
        None => BTreeMap::new(),
    };
    if let Some((verb, params)) = cli.command.as_ref().and_then(Command::verb_and_params) {
        map.insert("verb".into(), verb.into());
        for kv in &params.params {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("parameter {kv:?} is not KEY=VALUE")))?;
            let k = k.trim();
            if is_reserved(k) {
                return Err(CliError::Usage(format!("{k}: set it with --{k} instead", k = if k == "formats" { "format" } else { k })));
            }
            map.insert(k.into(), v.trim().into());
        }
    }
    if let Some(out) = &cli.out {
        map.insert("out".into(), out.to_string_lossy().into_owned());
    }
    if let Some(seed) = cli.seed {
        map.insert("seed".into(), seed.to_string());
    }
    let mut cfg = RunConfig::from_map(map)?;
    if let Some(formats) = &cli.format {
        let mut f = formats.clone();
        f.sort();
        f.dedup();
        cfg.formats = f;
    }
    Ok(cfg)
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("COULOMB_LAB_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("COULOMB_LAB_THREADS: {v:?} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("COULOMB_LAB_THREADS: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    configure_threads()?;
    match &cli.command {
        Some(Command::Reproduce { manifest }) => commands::reproduce(manifest, cli.seed, cli.out.clone()),
        _ => commands::execute(build_config(&cli)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("coulomb-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
