//! `roc`: threshold sweep over stored confidence maps against ground-truth
//! masks, with CSV and SVG output.

use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::Args;
use irstd_core::lrrt::{self, AnyTensor};
use irstd_core::metrics::{default_thresholds, roc_auc, Mask};
use irstd_core::tensor::Tensor;
use serde::Serialize;

use crate::commands::echo_config;
use crate::pgm;
use crate::report::roc_csv;
use crate::svgplot::roc_svg;
use crate::{atomic, RunError, RunResult};

#[derive(Args, Debug)]
pub struct RocArgs {
    /// Directory of confidence maps (*.lrrt), paired with masks by sorted
    /// file name.
    #[arg(long)]
    pub pred_dir: PathBuf,
    /// Directory of ground-truth masks (*.pgm), paired by sorted file name.
    #[arg(long)]
    pub mask_dir: PathBuf,
    /// Centroid matching radius in pixels.
    #[arg(long, default_value_t = 3.0)]
    pub d_max: f64,
    /// ROC CSV output path.
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    /// ROC SVG output path.
    #[arg(long)]
    pub out_svg: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved {
    pred_dir: String,
    mask_dir: String,
    d_max: f64,
}

#[derive(Serialize)]
struct Summary {
    pairs: usize,
    auc: f64,
}

fn sorted_files(dir: &PathBuf, ext: &str) -> RunResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))
        .map_err(RunError::Validation)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |e| e == ext))
        .collect();
    files.sort();
    Ok(files)
}

pub fn run(args: RocArgs) -> RunResult<()> {
    echo_config(
        "roc",
        &Resolved {
            pred_dir: args.pred_dir.display().to_string(),
            mask_dir: args.mask_dir.display().to_string(),
            d_max: args.d_max,
        },
    );

    let preds = sorted_files(&args.pred_dir, "lrrt")?;
    let masks = sorted_files(&args.mask_dir, "pgm")?;
    if preds.is_empty() || preds.len() != masks.len() {
        return Err(RunError::Validation(anyhow!(
            "need matching non-empty sets: {} confidence maps vs {} masks",
            preds.len(),
            masks.len()
        )));
    }

    let mut confs: Vec<Tensor<f64>> = Vec::with_capacity(preds.len());
    for p in &preds {
        let bytes = std::fs::read(p).map_err(|e| crate::io_error("reading prediction", e))?;
        let t: AnyTensor = lrrt::decode(&bytes).map_err(crate::classify)?;
        confs.push(t.to_f64());
    }
    let gts: Vec<Mask> = masks
        .iter()
        .map(|p| pgm::read_mask(p))
        .collect::<Result<_, _>>()
        .map_err(RunError::Validation)?;

    let (points, auc) =
        roc_auc(&confs, &gts, &default_thresholds(), args.d_max).map_err(crate::classify)?;

    if let Some(path) = &args.out_csv {
        atomic::write_atomic(path, roc_csv(&points).as_bytes())
            .map_err(|e| crate::io_error("writing roc csv", e))?;
    }
    if let Some(path) = &args.out_svg {
        atomic::write_atomic(path, roc_svg(&points, auc).as_bytes())
            .map_err(|e| crate::io_error("writing roc svg", e))?;
    }
    println!(
        "{}",
        serde_json::to_string(&Summary {
            pairs: preds.len(),
            auc,
        })
        .expect("summary serializes")
    );
    Ok(())
}
