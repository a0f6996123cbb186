use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use evmlink_cli::{load_config, run_and_write, Command};

/// Run an EVM measurement or handover experiment from a JSON config.
#[derive(Debug, Parser)]
#[command(name = "evmlink", version)]
struct Cli {
    command: Command,
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for independent sweep points.
    #[arg(long)]
    parallel: Option<usize>,
}

fn run(cli: Cli) -> evmlink_cli::Result<()> {
    let mut config = load_config(&cli.config)?;
    if config.command != cli.command {
        return Err(evmlink_cli::CliError::Config {
            path: "command".into(),
            message: format!("config says `{}` but `{}` was requested", config.command, cli.command),
        });
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if cli.parallel.is_some() {
        config.parallel = cli.parallel;
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.to_string_lossy().into_owned();
    }
    let config = config.resolve()?;
    let dir = PathBuf::from(&config.output.dir);
    let (table, out) = run_and_write(&config, &dir)?;
    eprintln!("{} rows -> {}", table.rows.len(), out.csv.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
