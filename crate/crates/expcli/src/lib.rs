//! Experiment runner: NAV and SNR sweeps, handover scenarios, CSV tables and
//! SVG plots.

pub mod config;
pub mod experiment;
pub mod plot;
pub mod table;

use std::fs;
use std::path::{Path, PathBuf};

pub use config::{load_config, parse_config, Command, ExperimentConfig, SweepAxis, SweepUnit};
pub use experiment::run_experiment;
pub use plot::{default_plot_spec, emit_plot, PlotSpec};
pub use table::ResultTable;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Config rejected; `path` locates the offending field.
    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("column selection: {0}")]
    Selection(String),
    #[error(transparent)]
    Core(#[from] evmlink::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub(crate) fn config(path: &str, message: impl Into<String>) -> Self {
        CliError::Config { path: path.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Paths written by [`write_outputs`].
#[derive(Debug, Clone)]
pub struct Outputs {
    pub csv: PathBuf,
    pub plot: PathBuf,
    pub config: PathBuf,
}

/// Run a resolved config and write `results.csv`, `plot.svg` and
/// `config.resolved.json` into `dir`.
pub fn run_and_write(config: &ExperimentConfig, dir: &Path) -> Result<(ResultTable, Outputs)> {
    let table = run_experiment(config)?;
    let spec = config.plot.clone().unwrap_or_else(|| default_plot_spec(config.command));
    let svg = emit_plot(&table, &spec)?;
    let out = write_outputs(dir, config, &table, &svg)?;
    Ok((table, out))
}

pub fn write_outputs(dir: &Path, config: &ExperimentConfig, table: &ResultTable, svg: &str) -> Result<Outputs> {
    fs::create_dir_all(dir)?;
    let out =
        Outputs { csv: dir.join("results.csv"), plot: dir.join("plot.svg"), config: dir.join("config.resolved.json") };
    table.write_csv(fs::File::create(&out.csv)?)?;
    fs::write(&out.plot, svg)?;
    fs::write(&out.config, serde_json::to_string_pretty(config)? + "\n")?;
    Ok(out)
}
