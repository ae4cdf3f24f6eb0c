use anyhow::Result;
use clap::{Parser, Subcommand};
use dsrcnn::cli::{self, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dsrcnn",
    about = "Deeply-supervised recurrent convolutional saliency detection: train, infer, evaluate"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a dataset directory (images/ + masks/).
    Train {
        /// Dataset root containing images/ and masks/.
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory for weights, loss history, and the config echo.
        #[arg(long)]
        out: PathBuf,
        /// TOML config file; flags below override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed for initialization, shuffling, and dropout.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of single-image SGD iterations.
        #[arg(long)]
        iterations: Option<usize>,
        /// Learning rate.
        #[arg(long)]
        lr: Option<f64>,
        /// Momentum coefficient in [0, 1).
        #[arg(long)]
        momentum: Option<f64>,
        /// Global gradient-norm clip.
        #[arg(long)]
        clip_norm: Option<f64>,
        /// Recurrent iterations per conv layer.
        #[arg(long)]
        rcl_t: Option<usize>,
        /// Five block channel counts, e.g. 8,16,32,64,64.
        #[arg(long)]
        channels: Option<String>,
        /// Dropout ratio in [0, 1).
        #[arg(long)]
        dropout: Option<f64>,
    },
    /// Predict saliency maps for an image or a directory of images.
    Infer {
        /// Weight file produced by `train`.
        #[arg(long)]
        weights: PathBuf,
        /// Input image file or directory.
        #[arg(long)]
        input: PathBuf,
        /// Output directory for the PNG maps.
        #[arg(long)]
        out: PathBuf,
        /// Also write the five per-block side maps.
        #[arg(long)]
        side_maps: bool,
        /// Accepted for pipeline-script symmetry; inference is deterministic.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate predicted maps against ground-truth masks.
    Eval {
        /// Directory of predicted saliency maps.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth masks.
        #[arg(long)]
        gt: PathBuf,
        /// Output directory for reports and the PR curve.
        #[arg(long)]
        out: PathBuf,
        /// TOML config file; flags below override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        /// beta^2 for the F-measure.
        #[arg(long)]
        beta_sq: Option<f64>,
        /// Number of PR thresholds.
        #[arg(long)]
        thresholds: Option<usize>,
        /// Accepted for pipeline-script symmetry; evaluation is deterministic.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the built-in gradient and oracle checks.
    Selftest {
        /// Corrupt one analytic gradient to prove the checks can fail.
        #[arg(long)]
        inject_fault: bool,
    },
}

fn run(args: Args) -> Result<ExitCode> {
    match args.command {
        Command::Train {
            dataset,
            out,
            config,
            seed,
            iterations,
            lr,
            momentum,
            clip_norm,
            rcl_t,
            channels,
            dropout,
        } => {
            let overrides = Overrides {
                seed,
                iterations,
                learning_rate: lr,
                momentum,
                clip_norm,
                rcl_iterations: rcl_t,
                block_channels: channels.as_deref().map(cli::parse_channels).transpose()?,
                dropout_ratio: dropout,
                ..Overrides::default()
            };
            let resolved = cli::resolve_config(config.as_deref(), &overrides)?;
            let outcome = cli::cmd_train(&dataset, &out, &resolved)?;
            println!(
                "trained on {} pairs for {} iterations; weights at {}",
                outcome.used_pairs,
                outcome.history.len(),
                outcome.weights_path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Infer {
            weights,
            input,
            out,
            side_maps,
            seed: _,
        } => {
            let outcome = cli::cmd_infer(&weights, &input, &out, side_maps)?;
            println!(
                "wrote {} maps to {} ({} inputs skipped)",
                outcome.written.len(),
                out.display(),
                outcome.skipped.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            pred,
            gt,
            out,
            config,
            beta_sq,
            thresholds,
            seed: _,
        } => {
            let overrides = Overrides {
                beta_sq,
                thresholds,
                ..Overrides::default()
            };
            let resolved = cli::resolve_config(config.as_deref(), &overrides)?;
            cli::cmd_eval(&pred, &gt, &out, &resolved)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest { inject_fault } => {
            let report = cli::cmd_selftest(inject_fault);
            Ok(if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
