use clap::Parser;
use magkalman::cli::{kind_name, output_paths, run_experiment, ExperimentConfig, RunKind};
use magkalman::Error;
use std::path::PathBuf;
use std::process::ExitCode;

/// Continuous-measurement magnetometry simulator and estimator.
#[derive(Parser, Debug)]
#[command(name = "magkalman", version, about)]
struct Args {
    /// What to run.
    #[arg(value_enum)]
    kind: RunKind,

    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,

    /// Directory for output files (default: alongside the working directory).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Override run.master_seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads (default: all cores; MAGKALMAN_THREADS also applies).
    #[arg(long)]
    threads: Option<usize>,

    /// Proceed even when the parameters violate the linear-Gaussian regime.
    #[arg(long)]
    allow_out_of_regime: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::InvalidParams(_)
        | Error::InvalidReparameterization { .. }
        | Error::GridMismatch(_)
        | Error::DimensionCap { .. }
        | Error::DegenerateMixture
        | Error::Unsupported(_) => 2,
        Error::RegimeViolation(_) => 3,
        Error::IntegrationDiverged { .. }
        | Error::StepBudgetExhausted { .. }
        | Error::LinearizationDegenerate { .. }
        | Error::NoMeasurement
        | Error::PositivityViolation { .. }
        | Error::Io(_) => 4,
    }
}

fn execute(args: &Args) -> Result<Vec<PathBuf>, Error> {
    let threads = args
        .threads
        .or_else(|| std::env::var("MAGKALMAN_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }

    let text = std::fs::read_to_string(&args.config)?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        cfg.run.master_seed = seed;
    }
    if args.allow_out_of_regime {
        cfg.run.allow_out_of_regime = true;
    }

    let tables = run_experiment(&cfg, args.kind)?;
    let paths = output_paths(&cfg, args.kind, args.out.as_deref(), &tables);
    for (table, path) in tables.iter().zip(&paths) {
        table.write_to(path, cfg.output.precision_digits)?;
    }
    let _ = kind_name(args.kind);
    Ok(paths)
}
