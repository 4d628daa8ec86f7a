//! `mzbw`: Madelung and spin-velocity analysis of wavefunctions from a run
//! config file.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mzbw_core::Backend;

use crate::commands::Run;
use crate::error::{CliError, CliResult, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "mzbw", version, about = "Madelung fluid and spin/Zitterbewegung velocity toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; the MZBW_OUT environment variable takes precedence.
    #[arg(long, global = true, default_value = "mzbw-out")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = Backend::Spectral)]
    backend: Backend,
    /// Overrides the `seed` key of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (speed only; results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Density, phase, momentum and quantum potential of the initial state.
    Decompose,
    /// Spin field, Pauli current and drift/internal velocity split.
    Spin,
    /// Split-step evolution into a snapshot directory.
    Evolve,
    /// Particle transport along drift or total velocity.
    Trajectories,
    /// Identity battery with a JSON report.
    Verify,
}

fn out_dir(flag: PathBuf) -> PathBuf {
    match std::env::var_os("MZBW_OUT") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag,
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let cfg = match &cli.config {
        Some(path) => config::load(path)?,
        // verify runs its built-in battery and needs no config
        None if matches!(cli.command, Command::Verify) => config::parse("")?,
        None => return Err(CliError::Config("--config is required".into())),
    };
    let out = out_dir(cli.out);
    if let Command::Verify = cli.command {
        let (params, seed) = config::general(&cfg, cli.seed)?;
        std::fs::create_dir_all(&out)?;
        return commands::verify_cmd(cfg.verify, params, seed, cli.backend, &out);
    }
    let needs_state = !matches!(cli.command, Command::Trajectories);
    let setup = config::setup(&cfg, cli.seed, needs_state)?;
    std::fs::create_dir_all(&out)?;
    let run = Run { cfg: &cfg, setup, backend: cli.backend, out };
    match cli.command {
        Command::Decompose => commands::decompose_cmd(&run),
        Command::Spin => commands::spin_cmd(&run),
        Command::Evolve => commands::evolve_cmd(&run),
        Command::Trajectories => commands::trajectories_cmd(&run),
        Command::Verify => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mzbw: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
