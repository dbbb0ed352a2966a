use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use corrspec_cli::config::RunConfig;
use corrspec_cli::{execute, write_artifacts, CliError};

/// Spectra of random matrices built from stationary random fields.
#[derive(Debug, Parser)]
#[command(name = "corrspec", version)]
struct Args {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for CSV/JSON artifacts and the manifest.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: logical cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn run(args: &Args) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| CliError::Io(e.to_string()))?;
    let threads = pool.current_num_threads();
    log::info!("running {:?} on {threads} threads", cfg.command);
    let artifacts = pool.install(|| execute(&cfg))?;
    write_artifacts(&args.out, &cfg, &artifacts, threads)?;
    log::info!("wrote {} artifacts to {}", artifacts.len() + 1, args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CORRSPEC_LOG", "warn")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("corrspec: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
