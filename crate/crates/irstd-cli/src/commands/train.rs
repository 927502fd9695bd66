//! `train`: optimize a model on a generated dataset, writing history.csv
//! plus best/final checkpoints.

use std::path::PathBuf;

use clap::Args;
use irstd_core::net::{Model, ModelConfig};
use irstd_core::scalar::Scalar;
use irstd_core::train::{train_loop, Sample, TrainConfig, TrainRun};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointMeta};
use crate::commands::{echo_config, load_json};
use crate::dataset::load_split;
use crate::report::history_csv;
use crate::{atomic, RunError, RunResult};

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory (as produced by synth-gen).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for history.csv, best.ckpt, final.ckpt.
    #[arg(long)]
    pub out: PathBuf,
    /// Element type used for training arithmetic.
    #[arg(long, value_parser = ["f32", "f64"], default_value = "f32")]
    pub precision: String,
    /// JSON file holding {"model": ..., "train": ...} base configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,

    // -- architecture ------------------------------------------------------
    /// Encoder stage count.
    #[arg(long)]
    pub stages: Option<usize>,
    /// Comma-separated channel ladder, e.g. 16,32,64,128.
    #[arg(long)]
    pub channels: Option<String>,
    /// Residual blocks per encoder stage.
    #[arg(long)]
    pub resblocks_per_encoder_stage: Option<usize>,
    /// Self-attention blocks at the bottleneck (0, 1 or 2).
    #[arg(long)]
    pub attention_blocks: Option<usize>,
    /// Group count for group normalization.
    #[arg(long)]
    pub groupnorm_groups: Option<usize>,
    /// Parameter initialization seed.
    #[arg(long)]
    pub model_seed: Option<u64>,

    // -- optimization -------------------------------------------------------
    /// Initial learning rate.
    #[arg(long)]
    pub lr0: Option<f64>,
    /// Adam first-moment decay.
    #[arg(long)]
    pub beta1: Option<f64>,
    /// Adam second-moment decay.
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Adam epsilon.
    #[arg(long)]
    pub eps: Option<f64>,
    /// L2 weight decay folded into the gradient.
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Mini-batch size.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Poly learning-rate decay exponent.
    #[arg(long)]
    pub poly_power: Option<f64>,
    /// Reconstruction loss weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Shuffling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Binarization threshold for validation metrics.
    #[arg(long)]
    pub eval_tau: Option<f64>,
    /// Optional global gradient-norm clip.
    #[arg(long)]
    pub grad_clip: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainFileConfig {
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
}

#[derive(Serialize)]
struct Resolved<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    precision: &'a str,
    data: String,
    out: String,
}

pub fn run(args: TrainArgs) -> RunResult<()> {
    let (model_cfg, train_cfg) = resolve(&args)?;
    echo_config(
        "train",
        &Resolved {
            model: &model_cfg,
            train: &train_cfg,
            precision: &args.precision,
            data: args.data.display().to_string(),
            out: args.out.display().to_string(),
        },
    );

    match args.precision.as_str() {
        "f32" => run_typed::<f32>(&args, model_cfg, train_cfg),
        "f64" => run_typed::<f64>(&args, model_cfg, train_cfg),
        other => Err(RunError::Validation(anyhow::anyhow!(
            "unknown precision {other}"
        ))),
    }
}

fn run_typed<E: Scalar>(
    args: &TrainArgs,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
) -> RunResult<()> {
    let (train, val): (Vec<Sample<E>>, Vec<Sample<E>>) =
        load_split(&args.data).map_err(RunError::Validation)?;
    eprintln!(
        "loaded {} train / {} validation samples from {}",
        train.len(),
        val.len(),
        args.data.display()
    );

    let mut model = Model::<E>::build(model_cfg).map_err(crate::classify)?;
    eprintln!("model parameters: {}", model.param_count());
    let run: TrainRun<E> =
        train_loop(&mut model, &train, &val, &train_cfg).map_err(crate::classify)?;

    atomic::write_atomic(
        &args.out.join("history.csv"),
        history_csv(&run.history).as_bytes(),
    )
    .map_err(|e| crate::io_error("writing history.csv", e))?;

    let meta = |epoch: Option<usize>, val_iou: Option<f64>| CheckpointMeta {
        precision: args.precision.clone(),
        epoch,
        val_iou,
        train_seed: Some(train_cfg.seed),
    };
    checkpoint::save(
        &args.out.join("best.ckpt"),
        &run.best,
        &meta(Some(run.best_epoch), Some(run.best_val_iou)),
    )
    .map_err(RunError::Runtime)?;
    checkpoint::save(
        &args.out.join("final.ckpt"),
        &model,
        &meta(run.history.last().map(|r| r.epoch), run.history.last().map(|r| r.val_iou)),
    )
    .map_err(RunError::Runtime)?;

    eprintln!(
        "best validation IoU {:.4} at epoch {}; artifacts in {}",
        run.best_val_iou,
        run.best_epoch,
        args.out.display()
    );
    Ok(())
}

fn resolve(args: &TrainArgs) -> RunResult<(ModelConfig, TrainConfig)> {
    let file: TrainFileConfig = match &args.config {
        Some(path) => load_json(path).map_err(RunError::Validation)?,
        None => TrainFileConfig::default(),
    };
    let mut model = file.model.unwrap_or_default();
    let mut train = file.train.unwrap_or_default();

    if let Some(v) = args.stages {
        model.stages = v;
    }
    if let Some(spec) = &args.channels {
        let parsed: Result<Vec<usize>, _> = spec.split(',').map(|s| s.trim().parse()).collect();
        model.channels = parsed.map_err(|e| {
            RunError::Validation(anyhow::anyhow!("--channels {spec:?}: {e}"))
        })?;
    }
    if let Some(v) = args.resblocks_per_encoder_stage {
        model.resblocks_per_encoder_stage = v;
    }
    if let Some(v) = args.attention_blocks {
        model.attention_blocks = v;
    }
    if let Some(v) = args.groupnorm_groups {
        model.groupnorm_groups = v;
    }
    if let Some(v) = args.model_seed {
        model.seed = v;
    }

    if let Some(v) = args.lr0 {
        train.lr0 = v;
    }
    if let Some(v) = args.beta1 {
        train.beta1 = v;
    }
    if let Some(v) = args.beta2 {
        train.beta2 = v;
    }
    if let Some(v) = args.eps {
        train.eps = v;
    }
    if let Some(v) = args.weight_decay {
        train.weight_decay = v;
    }
    if let Some(v) = args.batch {
        train.batch = v;
    }
    if let Some(v) = args.epochs {
        train.epochs = v;
    }
    if let Some(v) = args.poly_power {
        train.poly_power = v;
    }
    if let Some(v) = args.lambda {
        train.lambda = v;
    }
    if let Some(v) = args.seed {
        train.seed = v;
    }
    if let Some(v) = args.eval_tau {
        train.eval_tau = v;
    }
    if let Some(v) = args.grad_clip {
        train.grad_clip = Some(v);
    }

    model.validate().map_err(crate::classify)?;
    train.validate().map_err(crate::classify)?;
    Ok((model, train))
}
