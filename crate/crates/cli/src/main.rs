use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qxai_cli::{cmd_explain, cmd_report, cmd_spectra, cmd_train, run_marked, ExplainTarget, RunConfig, SampleSel};

#[derive(Parser)]
#[command(name = "qxai", version, about = "Train and explain hybrid quantum classifiers")]
struct Cli {
    /// JSON run configuration; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config file).
    #[arg(long, global = true, env = "QXAI_OUT")]
    out: Option<PathBuf>,
    /// Seed for splitting, initialization, sampling and clustering.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured models and write checkpoints.
    Train,
    /// Attribute one model component.
    Explain {
        #[arg(long)]
        target: ExplainTarget,
        /// general|class for feature-map, direct|surrogate for decision.
        #[arg(long)]
        mode: Option<String>,
        /// Test-split row index, or `all`.
        #[arg(long, default_value = "0")]
        sample: SampleSel,
    },
    /// Eigen-spectrum, kernel PCA and clusters of the training kernel.
    Spectra,
    /// Train, explain every component and analyze the kernel.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e:#}");
                return ExitCode::FAILURE;
            }
        },
        None => RunConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.output_dir = Some(out);
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let result = match &cli.command {
        Command::Train => run_marked(&cfg, "train", || cmd_train(&cfg).map(drop)),
        Command::Explain { target, mode, sample } => {
            run_marked(&cfg, "explain", || cmd_explain(&cfg, *target, mode.as_deref(), *sample))
        }
        Command::Spectra => run_marked(&cfg, "spectra", || {
            let s = cmd_spectra(&cfg)?;
            println!(
                "{} of {} components reach {} of the variance",
                s.components_for_threshold, s.n_train, s.variance_threshold
            );
            Ok(())
        }),
        Command::Report => run_marked(&cfg, "report", || cmd_report(&cfg)),
    };
    match result {
        Ok(()) => {
            println!("artifacts in {}", cfg.out_dir().display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
