//! `eval`: score a checkpoint on a dataset.

use std::path::PathBuf;

use clap::Args;
use irstd_core::metrics::MetricsReport;
use irstd_core::train::{evaluate, Sample};
use serde::Serialize;

use crate::checkpoint;
use crate::commands::echo_config;
use crate::dataset::{load_dir, load_split};
use crate::report::{metrics_csv, roc_csv};
use crate::svgplot::roc_svg;
use crate::{atomic, RunError, RunResult};

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset directory (as produced by synth-gen).
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to evaluate.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Which part of the dataset to score.
    #[arg(long, value_parser = ["val", "all"], default_value = "val")]
    pub split: String,
    /// Binarization threshold.
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// Centroid matching radius in pixels for object metrics.
    #[arg(long, default_value_t = 3.0)]
    pub d_max: f64,
    /// Metrics CSV output path.
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    /// ROC sweep CSV output path.
    #[arg(long)]
    pub roc_csv: Option<PathBuf>,
    /// ROC SVG plot output path.
    #[arg(long)]
    pub roc_svg: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved {
    data: String,
    checkpoint: String,
    split: String,
    tau: f64,
    d_max: f64,
}

#[derive(Serialize)]
struct Summary {
    iou: f64,
    niou: f64,
    pd: f64,
    fa: f64,
    auc: f64,
    samples: usize,
}

pub fn run(args: EvalArgs) -> RunResult<()> {
    echo_config(
        "eval",
        &Resolved {
            data: args.data.display().to_string(),
            checkpoint: args.checkpoint.display().to_string(),
            split: args.split.clone(),
            tau: args.tau,
            d_max: args.d_max,
        },
    );

    let decoded = checkpoint::load(&args.checkpoint).map_err(RunError::Validation)?;
    let precision = decoded.header.meta.precision.clone();

    let (report, n_samples) = match precision.as_str() {
        "f32" => eval_typed::<f32>(&args, &decoded)?,
        "f64" => eval_typed::<f64>(&args, &decoded)?,
        other => {
            return Err(RunError::Validation(anyhow::anyhow!(
                "checkpoint precision {other} unsupported"
            )))
        }
    };

    if let Some(path) = &args.out_csv {
        atomic::write_atomic(path, metrics_csv(&report).as_bytes())
            .map_err(|e| crate::io_error("writing metrics csv", e))?;
    }
    if let Some(path) = &args.roc_csv {
        atomic::write_atomic(path, roc_csv(&report.roc).as_bytes())
            .map_err(|e| crate::io_error("writing roc csv", e))?;
    }
    if let Some(path) = &args.roc_svg {
        atomic::write_atomic(path, roc_svg(&report.roc, report.auc).as_bytes())
            .map_err(|e| crate::io_error("writing roc svg", e))?;
    }

    println!(
        "{}",
        serde_json::to_string(&Summary {
            iou: report.iou,
            niou: report.niou,
            pd: report.pd,
            fa: report.fa,
            auc: report.auc,
            samples: n_samples,
        })
        .expect("summary serializes")
    );
    Ok(())
}

fn eval_typed<E: irstd_core::scalar::Scalar>(
    args: &EvalArgs,
    decoded: &checkpoint::DecodedCheckpoint,
) -> RunResult<(MetricsReport, usize)> {
    let model = checkpoint::instantiate::<E>(decoded).map_err(RunError::Validation)?;
    let samples: Vec<Sample<E>> = match args.split.as_str() {
        "all" => load_dir(&args.data).map_err(RunError::Validation)?,
        _ => load_split(&args.data).map_err(RunError::Validation)?.1,
    };
    let n = samples.len();
    let report = evaluate(&model, &samples, args.tau, 8).map_err(crate::classify)?;
    Ok((report, n))
}
