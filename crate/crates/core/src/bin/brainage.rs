use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use brainage::commands::{
    cmd_evaluate, cmd_predict, cmd_preprocess, cmd_pretrain, cmd_synth, cmd_train_stage1, cmd_train_stage2, Context,
};
use brainage::config::RunConfig;
use brainage::metrics::EvalMode;
use brainage::pipeline::StageTag;
use brainage::Result;

#[derive(Parser)]
#[command(name = "brainage", version, about = "Two-stage multi-modal brain-age experiments")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Parallel workers; outputs are identical for any value.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Accept checkpoints whose config fingerprint differs.
    #[arg(long, global = true)]
    force: bool,
    /// Suppress progress output.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic train and test cohorts.
    Synth,
    /// Resample, bias-correct and normalise a manifest or a single volume.
    Preprocess {
        /// A manifest CSV or a single .vol/.nii file.
        #[arg(long)]
        input: PathBuf,
        /// Output directory for a manifest, output file otherwise.
        #[arg(long)]
        output: PathBuf,
    },
    /// Masked-autoencoder pretraining of the encoder.
    Pretrain,
    /// Train the stage classifier.
    TrainStage1 {
        /// Pretrain checkpoint (default: the one in the work dir).
        #[arg(long, conflicts_with = "scratch")]
        init: Option<PathBuf>,
        /// Start from random weights instead of a pretrain checkpoint.
        #[arg(long)]
        scratch: bool,
    },
    /// Train the stage-conditioned regressor.
    TrainStage2 {
        /// Stage-1 checkpoint (default: the one in the work dir).
        #[arg(long)]
        stage1: Option<PathBuf>,
    },
    /// Predict ages for every subject of a manifest.
    Predict {
        /// Stage-2 checkpoint (default: the one in the work dir).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to the test split.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Score a predictions file.
    Evaluate {
        /// Defaults to the predictions file in the work dir.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Cross-check true ages against this manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// per_subject or per_modality
        #[arg(long, default_value = "per_subject")]
        mode: EvalMode,
    },
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let ctx = Context {
        workers: cli.workers.max(1),
        force: cli.force,
        verbose: !cli.quiet,
        config,
    };
    let c = &ctx.config;
    match cli.cmd {
        Cmd::Synth => {
            cmd_synth(&ctx)?;
        }
        Cmd::Preprocess { input, output } => {
            cmd_preprocess(&ctx, &input, &output)?;
        }
        Cmd::Pretrain => {
            cmd_pretrain(&ctx)?;
        }
        Cmd::TrainStage1 { init, scratch } => {
            let init = if scratch { None } else { Some(init.unwrap_or_else(|| c.checkpoint(StageTag::Pretrain))) };
            cmd_train_stage1(&ctx, init.as_deref())?;
        }
        Cmd::TrainStage2 { stage1 } => {
            cmd_train_stage2(&ctx, &stage1.unwrap_or_else(|| c.checkpoint(StageTag::Stage1)))?;
        }
        Cmd::Predict { checkpoint, manifest } => {
            let ckpt = checkpoint.unwrap_or_else(|| c.checkpoint(StageTag::Stage2));
            cmd_predict(&ctx, &ckpt, &manifest.unwrap_or_else(|| c.test_manifest()))?;
        }
        Cmd::Evaluate { predictions, manifest, mode } => {
            let preds = predictions.unwrap_or_else(|| c.predictions_path());
            let (_, text) = cmd_evaluate(&ctx, &preds, manifest.as_deref(), mode)?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
