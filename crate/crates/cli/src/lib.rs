//! Command-line front end for the metastability experiments.

pub mod config;
pub mod experiments;
pub mod output;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{parse_config, ConfigError, ExperimentConfig, ExperimentKind};
pub use experiments::{run_experiment, Outcome};

pub const OUT_ENV: &str = "KRAMERS_WAVE_OUT";
pub const THREADS_ENV: &str = "KRAMERS_WAVE_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("runtime error: {0}")]
    Runtime(#[from] kramers_core::Error),
    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Read { .. } => 2,
            CliError::Runtime(_) | CliError::Output(_) => 3,
        }
    }
}

/// Files written by one run.
#[derive(Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub files: Vec<String>,
}

pub fn load_config(path: &Path, kind: ExperimentKind, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Read { path: path.display().to_string(), message: e.to_string() })?;
    let mut cfg = parse_config(&text, Some(kind))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Output directory: the flag, then `KRAMERS_WAVE_OUT`, then `./out`.
pub fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"))
}

/// Thread count: the flag, then `KRAMERS_WAVE_THREADS`.
pub fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(s) => s.trim().parse::<usize>().ok().filter(|&k| k > 0).map(Some).ok_or_else(|| {
            CliError::Config(ConfigError {
                violations: vec![config::Violation { path: THREADS_ENV.into(), message: format!("expected a positive integer, got {s:?}") }],
            })
        }),
        Err(_) => Ok(None),
    }
}

/// Runs `cfg` and writes `config.json`, `summary.json`, one CSV per table
/// and any binary files into `out_dir`. Everything written is a pure
/// function of the canonical configuration.
pub fn execute(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport, CliError> {
    let outcome = run_experiment(cfg)?;
    let canonical = cfg.to_value();
    let config_hash = output::sha256_hex(&cfg.canonical());
    let mut files = Vec::new();
    let mut write = |name: &str, bytes: &[u8]| -> Result<(), CliError> {
        output::write_file(out_dir, name, bytes)?;
        files.push(name.to_string());
        Ok(())
    };
    write("config.json", output::to_json_string(&canonical).as_bytes())?;
    let mut table_files = Vec::new();
    for t in &outcome.tables {
        let name = format!("{}.csv", t.name);
        write(&name, &t.to_csv()?)?;
        table_files.push(name);
    }
    for (name, bytes) in &outcome.files {
        write(name, bytes)?;
        table_files.push(name.clone());
    }
    let summary = output::summary_value(cfg.experiment.name(), &config_hash, &canonical, &outcome.results, &outcome.notes, &table_files);
    write("summary.json", output::to_json_string(&summary).as_bytes())?;
    Ok(RunReport { out_dir: out_dir.to_path_buf(), config_hash, files })
}
