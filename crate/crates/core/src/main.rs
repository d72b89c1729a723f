//! `sincfront` CLI: reproducible training, response export, gradient
//! checking, noisy-band experiments and dataset synthesis.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sincfront::commands;
use sincfront::config::ExperimentConfig;
use sincfront::error::{Error, Result};

#[derive(Parser)]
#[command(name = "sincfront", version, about = "Sinc filterbank front-end experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for this run.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Config overrides of the form key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, trace and config echo.
    Train(RunArgs),
    /// Export per-filter and cumulative frequency responses of a checkpoint.
    Respond {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Frequency-grid size (must be at least twice the filter length).
        #[arg(long, default_value_t = 4096)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every learnable gradient, both variants.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Sign-flip one first-layer gradient to prove the check catches it.
        #[arg(long)]
        corrupt_first_layer: bool,
    },
    /// Paired sinc-vs-learned noisy-band adaptation experiment.
    Valley(RunArgs),
    /// Emit the synthetic dataset as WAV files plus a manifest.
    Synth(RunArgs),
}

fn load_config(path: &Option<PathBuf>, seed: Option<u64>, set: &[String]) -> Result<ExperimentConfig> {
    let mut config = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for assignment in set {
        config.apply_override(assignment)?;
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn init_thread_pool() -> Result<()> {
    if let Ok(raw) = std::env::var("SINCFRONT_THREADS") {
        let threads: usize = raw
            .parse()
            .map_err(|_| Error::Config(format!("SINCFRONT_THREADS='{raw}' is not a number")))?;
        if threads == 0 {
            return Err(Error::Config("SINCFRONT_THREADS must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run() -> Result<ExitCode> {
    init_thread_pool()?;
    let cli = Cli::parse();
    match cli.command {
        Command::Train(args) => {
            let config = load_config(&args.config, args.seed, &args.set)?;
            commands::cmd_train(&config, &args.out)?;
        }
        Command::Respond { checkpoint, grid, out } => {
            commands::cmd_respond(&checkpoint, grid, &out)?;
        }
        Command::Gradcheck {
            config,
            seed,
            corrupt_first_layer,
        } => {
            let config = load_config(&config, seed, &[])?;
            if !commands::cmd_gradcheck(config.seed, corrupt_first_layer)? {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Valley(args) => {
            let config = load_config(&args.config, args.seed, &args.set)?;
            commands::cmd_valley(&config, &args.out)?;
        }
        Command::Synth(args) => {
            let config = load_config(&args.config, args.seed, &args.set)?;
            commands::cmd_synth(&config, &args.out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::ParamDomain(_) => "param",
        Error::Spec(_) => "spec",
        Error::Shape(_) => "shape",
        Error::Config(_) => "config",
        Error::Format(_) => "format",
        Error::Domain(_) => "domain",
        Error::Label(_) => "label",
        Error::Numeric(_) => "numeric",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!(
                "error code={} kind={} message={:?}",
                e.exit_code(),
                error_kind(&e),
                e.to_string()
            );
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
