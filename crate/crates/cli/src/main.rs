use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use kramers_wave::{execute, load_config, resolve_out_dir, resolve_threads, CliError, ExperimentKind};

#[derive(Parser, Debug)]
#[command(name = "kramers-wave", version, about = "Metastability experiments for truncated nonlinear wave and heat flows")]
struct Cli {
    /// Experiment to run.
    #[arg(value_enum)]
    experiment: ExperimentKind,
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed (overrides the configuration).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $KRAMERS_WAVE_OUT or ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: $KRAMERS_WAVE_THREADS or all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli.config, cli.experiment, cli.seed)?;
    if let Some(k) = resolve_threads(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Runtime(kramers_core::Error::InvalidArgument(e.to_string())))?;
    }
    let out = resolve_out_dir(cli.out);
    let start = Instant::now();
    let report = execute(&cfg, &out)?;
    eprintln!(
        "{} finished in {:.3} s; config {}; wrote {} files to {}",
        cfg.experiment.name(),
        start.elapsed().as_secs_f64(),
        &report.config_hash[..16],
        report.files.len(),
        report.out_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kramers-wave: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
