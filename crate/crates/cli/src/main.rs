use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adploc_cli::{cmd_baseline, cmd_evaluate, cmd_generate, cmd_train, exit_code, BaselineKind};

/// Synthetic MIMO-OFDM positioning pipeline: generate channel datasets,
/// train the angle-delay-profile transformer, and report RMSE/CDF.
#[derive(Parser)]
#[command(name = "adploc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a channel dataset from a scenario config.
    Generate {
        /// Scenario JSON config.
        #[arg(long)]
        config: PathBuf,
        /// Output dataset path (a JSON sidecar is written next to it).
        #[arg(long)]
        out: PathBuf,
        /// Number of samples to draw.
        #[arg(long)]
        n_samples: usize,
        /// Overrides the seed in the scenario config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Split a dataset, convert to ADPs, and train the transformer.
    Train {
        /// Dataset written by `generate`.
        #[arg(long)]
        dataset: PathBuf,
        /// Train JSON config (hyperparameters + optional model overrides).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// History CSV path (default: <out>.history.csv).
        #[arg(long)]
        history: Option<PathBuf>,
        /// Overrides the seed in the train config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on the dataset's test split.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Report prefix: writes <out>.json and <out>_cdf.csv.
        #[arg(long)]
        out: PathBuf,
        /// Error thresholds (meters) for exceedance reporting; repeatable.
        #[arg(long = "threshold")]
        thresholds: Vec<f64>,
        /// Optional train config overriding the split stored in the
        /// checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a reference baseline on the dataset's test split.
    Baseline {
        #[arg(long)]
        dataset: PathBuf,
        /// `centroid` or `mlp`.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report prefix: writes <out>.json and <out>_cdf.csv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "threshold")]
        thresholds: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate {
            config,
            out,
            n_samples,
            seed,
        } => cmd_generate(&config, &out, n_samples, seed).map(|_| ()),
        Command::Train {
            dataset,
            config,
            out,
            history,
            seed,
        } => match cmd_train(&dataset, config.as_deref(), &out, history.as_deref(), seed) {
            // A divergence abort leaves the last good checkpoint behind but
            // still signals "numerical abort" to the caller.
            Ok(summary) if summary.aborted => {
                eprintln!("error: training aborted on non-finite loss; last good checkpoint kept");
                return ExitCode::from(3);
            }
            other => other.map(|_| ()),
        },
        Command::Evaluate {
            dataset,
            checkpoint,
            out,
            thresholds,
            config,
        } => cmd_evaluate(&dataset, &checkpoint, &out, &thresholds, config.as_deref()).map(|_| ()),
        Command::Baseline {
            dataset,
            kind,
            config,
            out,
            thresholds,
            seed,
        } => kind
            .parse::<BaselineKind>()
            .and_then(|k| cmd_baseline(&dataset, k, config.as_deref(), &out, &thresholds, seed))
            .map(|_| ()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
