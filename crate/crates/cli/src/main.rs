use std::path::PathBuf;
use std::process::ExitCode;

use ahx_cli::output::Writer;
use ahx_cli::{run, CliError, Command, ExperimentConfig, EXIT_CONFIG};
use clap::Parser;

/// Run an experiment described by a JSON config and write CSV/JSON/SVG artifacts.
#[derive(Parser, Debug)]
#[command(name = "ahx", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for grid rows (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

fn main_inner(args: &Args) -> Result<(), CliError> {
    let bytes = std::fs::read(&args.config).map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let (cfg, hash) = ExperimentConfig::from_bytes(&bytes)?;
    let writer = Writer::new(&args.out, hash)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = args.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| CliError::Io(e.to_string()))?;
    let written = pool.install(|| run(args.command, &cfg, &writer))?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match main_inner(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ahx: {e}");
            ExitCode::from(e.exit_code().clamp(0, 255) as u8)
        }
    }
}
