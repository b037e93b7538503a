//! Command-line front end for the joint localizer.

use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use geometry::normals::DEFAULT_K_NORMALS;
use geometry::UpAxis;
use jointloc::eval::ReportColumn;
use jointloc::model::Checkpoint;
use jointloc::pipeline::{
    evaluate_checkpoint, evaluate_predictions, input_kind, predict, preprocess, write_prediction, EvalOptions,
    Evaluation, PreprocessOptions,
};
use jointloc::rigdata::conditioning::{RotationLimits, DEFAULT_RETRIES};
use jointloc::rigdata::files::{Split, SplitCounts};
use jointloc::synth::{write_dataset, SynthConfig};
use jointloc::train::{fit, TrainConfig};
use jointloc::CoreError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// 2 for usage and configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_usage() => 2,
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser, Serialize)]
#[command(name = "jointloc", version, about = "Localize skeleton joints inside human point clouds")]
pub struct Cli {
    /// Log more (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Write a raw dataset of procedural rigged humanoids.
    Synth(SynthArgs),
    /// Condition a raw dataset: leaf correction, posing, normalization, normals.
    Preprocess(PreprocessArgs),
    /// Train from a TOML config.
    Train(TrainArgs),
    /// Score a checkpoint or stored predictions on a conditioned split.
    Evaluate(EvaluateArgs),
    /// Predict the joints of one mesh, cloud or conditioned sample.
    Predict(PredictArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Output directory.
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub train: usize,
    #[arg(long, default_value_t = 2)]
    pub val: usize,
    #[arg(long, default_value_t = 2)]
    pub test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Marching grid spacing as a fraction of body height.
    #[arg(long, default_value_t = SynthConfig::default().grid_step)]
    pub grid_step: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct PreprocessArgs {
    /// Raw dataset directory (with manifest.json).
    pub raw: PathBuf,
    /// Output directory for the conditioned dataset.
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Apply random joint rotations that keep every bone inside the mesh.
    #[arg(long)]
    pub pose_randomize: bool,
    /// JSON rotation limits; ±15° on every axis when omitted.
    #[arg(long)]
    pub limits_file: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RETRIES)]
    pub retries: usize,
    #[arg(long, default_value_t = DEFAULT_K_NORMALS)]
    pub k_normals: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Training config (TOML).
    pub config: PathBuf,
    /// Use xyz only, without normals.
    #[arg(long)]
    pub no_normals: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Continue from last.ckpt in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Conditioned dataset directory.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, required_unless_present = "predictions_dir", conflicts_with = "predictions_dir")]
    pub checkpoint: Option<PathBuf>,
    /// Score `<dir>/<id>/joints.json` files instead of running a checkpoint.
    #[arg(long)]
    pub predictions_dir: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Where mpjpe.csv and pcj.csv go.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write pcj.svg.
    #[arg(long)]
    pub svg: bool,
    /// Label for the method column.
    #[arg(long, default_value = "ours")]
    pub method: String,
    /// Require a checkpoint trained without normals.
    #[arg(long, conflicts_with = "normals")]
    pub no_normals: bool,
    /// Require a checkpoint trained with normals.
    #[arg(long)]
    pub normals: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    pub checkpoint: PathBuf,
    /// Mesh (.ply/.obj), point cloud (.ply) or conditioned sample directory.
    pub input: PathBuf,
    /// Output directory for joints.json and skeleton.ply.
    pub out: PathBuf,
    /// The input cloud is already normalized and carries normals.
    #[arg(long)]
    pub conditioned: bool,
    #[arg(long, default_value = "y")]
    pub up_axis: UpAxis,
    #[arg(long, default_value_t = DEFAULT_K_NORMALS)]
    pub k_normals: usize,
}

/// Sets the log level from the `-v` count unless RUST_LOG is set.
pub fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    log::info!(
        "resolved command: {}",
        serde_json::to_string(cli).unwrap_or_else(|e| format!("<unserializable: {e}>"))
    );
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => run_preprocess(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Predict(a) => run_predict(a),
    }
}

fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let config = SynthConfig {
        grid_step: a.grid_step,
        ..SynthConfig::default()
    };
    let counts = SplitCounts {
        train: a.train,
        val: a.val,
        test: a.test,
    };
    let manifest = write_dataset(&a.out, counts, a.seed, &config)?;
    println!("wrote {} humanoids to {}", manifest.all_ids().count(), a.out.display());
    Ok(())
}

fn run_preprocess(a: &PreprocessArgs) -> Result<(), CliError> {
    let limits = match (&a.limits_file, a.pose_randomize) {
        (Some(path), _) => RotationLimits::load(path)?,
        (None, true) => RotationLimits::symmetric(RotationLimits::MAX_DEGREES)?,
        (None, false) => RotationLimits::zero(),
    };
    let options = PreprocessOptions {
        seed: a.seed,
        pose_randomize: a.pose_randomize,
        limits,
        retries: a.retries,
        k_normals: a.k_normals,
    };
    let record = preprocess(&a.raw, &a.out, &options)?;
    let warned = record.samples.iter().filter(|s| !s.warnings.is_empty()).count();
    println!(
        "conditioned {} samples into {} ({} with warnings, {} failed)",
        record.samples.len(),
        a.out.display(),
        warned,
        record.failures.len()
    );
    if record.failures.is_empty() {
        Ok(())
    } else {
        let ids: Vec<&str> = record.failures.iter().map(|f| f.id.as_str()).collect();
        Err(CliError::Failed(format!("{} samples failed: {}", ids.len(), ids.join(", "))))
    }
}

fn train(a: &TrainArgs) -> Result<(), CliError> {
    let mut config = TrainConfig::load(&a.config)?;
    if a.no_normals {
        config.use_normals = false;
    }
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(d) = &a.dataset {
        config.dataset = d.clone();
    }
    if let Some(o) = &a.output_dir {
        config.output_dir = o.clone();
    }
    config.validate()?;
    let outcome = fit(&config, a.resume)?;
    for row in &outcome.log {
        let val = row.val_mpjpe.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "epoch {:>4}  loss {:.6}  val mpjpe {}  lr {:.3e}  {:.1}s",
            row.epoch, row.train_loss, val, row.lr, row.seconds
        );
    }
    println!("checkpoints in {}", config.output_dir.display());
    Ok(())
}

fn print_report(evaluation: &Evaluation) {
    let cells: Vec<String> = ReportColumn::ALL
        .iter()
        .map(|&c| {
            let v = evaluation.report.column(c).map_or("-".to_string(), |v| format!("{v:.3}"));
            format!("{} {v}", c.label())
        })
        .collect();
    println!("MPJPE (% of height): {}", cells.join(", "));
    if !evaluation.flagged.is_empty() {
        println!("{} joints had no PCJ threshold and were left out", evaluation.flagged.len());
    }
}

fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let options = EvalOptions {
        split: a.split,
        method: a.method.clone(),
        ..EvalOptions::default()
    };
    let evaluation = match (&a.checkpoint, &a.predictions_dir) {
        (Some(ck), None) => {
            let expect = if a.no_normals {
                Some(false)
            } else if a.normals {
                Some(true)
            } else {
                None
            };
            evaluate_checkpoint(&Checkpoint::load(ck)?, &a.dataset, &options, expect)?
        }
        (None, Some(dir)) => {
            if a.no_normals || a.normals {
                return Err(CliError::Usage("--normals/--no-normals only apply to --checkpoint".into()));
            }
            evaluate_predictions(dir, &a.dataset, &options)?
        }
        _ => return Err(CliError::Usage("give exactly one of --checkpoint or --predictions-dir".into())),
    };
    evaluation.write(&a.out, a.svg)?;
    print_report(&evaluation);
    println!("reports in {}", a.out.display());
    Ok(())
}

fn run_predict(a: &PredictArgs) -> Result<(), CliError> {
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let kind = input_kind(&a.input, a.conditioned);
    let outcome = predict(&checkpoint, &a.input, kind, a.up_axis, a.k_normals)?;
    write_prediction(&a.out, &checkpoint, &outcome)?;
    println!(
        "{} points, {} joints written to {}",
        outcome.cloud_points,
        outcome.joints.len(),
        a.out.display()
    );
    println!(
        "time: conditioning {:.3} s, inference {:.3} s, total {:.3} s",
        outcome.conditioning_seconds,
        outcome.inference_seconds,
        outcome.conditioning_seconds + outcome.inference_seconds
    );
    Ok(())
}
