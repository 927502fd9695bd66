//! `rpca-baseline`: training-free detector via patch-image RPCA.

use std::path::PathBuf;

use clap::Args;
use irstd_core::lowrank::{build_patch_image, detect_map, rpca_ialm, PatchConfig, RpcaOptions};
use irstd_core::lrrt;
use serde::Serialize;

use crate::commands::echo_config;
use crate::pgm;
use crate::{atomic, RunError, RunResult};

#[derive(Args, Debug)]
pub struct RpcaArgs {
    /// Input grayscale PGM image.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Confidence map output (LRRT tensor).
    #[arg(long)]
    pub out_map: Option<PathBuf>,
    /// Solver statistics output (JSON).
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Patch edge length in pixels.
    #[arg(long, default_value_t = 50)]
    pub patch: usize,
    /// Patch stride in pixels.
    #[arg(long, default_value_t = 10)]
    pub stride: usize,
    /// Sparsity weight; defaults to 1/sqrt(max(rows, cols)).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Convergence tolerance on the relative residual.
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    /// Iteration cap.
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Penalty growth factor.
    #[arg(long, default_value_t = 1.5)]
    pub rho: f64,
    /// Suppress map values below this fraction of the peak.
    #[arg(long, default_value_t = 0.0)]
    pub tau_rel: f64,
}

#[derive(Serialize)]
struct Resolved {
    input: String,
    patch: usize,
    stride: usize,
    lambda: Option<f64>,
    tol: f64,
    max_iter: usize,
    rho: f64,
    tau_rel: f64,
}

#[derive(Serialize)]
struct Stats {
    patch_rows: usize,
    patch_cols: usize,
    iterations: usize,
    converged: bool,
    residual: f64,
    rank_b: usize,
    nnz_t: usize,
}

pub fn run(args: RpcaArgs) -> RunResult<()> {
    echo_config(
        "rpca-baseline",
        &Resolved {
            input: args.input.display().to_string(),
            patch: args.patch,
            stride: args.stride,
            lambda: args.lambda,
            tol: args.tol,
            max_iter: args.max_iter,
            rho: args.rho,
            tau_rel: args.tau_rel,
        },
    );

    let image = pgm::read(&args.input).map_err(RunError::Validation)?;
    let cfg = PatchConfig {
        patch: args.patch,
        stride: args.stride,
    };
    let opts = RpcaOptions {
        lambda: args.lambda,
        tol: args.tol,
        max_iter: args.max_iter,
        mu0: None,
        rho: args.rho,
    };

    let d = build_patch_image(&image, &cfg).map_err(crate::classify)?;
    let (rows, cols) = (d.shape().dim(0), d.shape().dim(1));
    eprintln!("patch-image data matrix: {rows} x {cols}");

    let result = rpca_ialm(&d, &opts).map_err(crate::classify)?;
    let (h, w) = (image.shape().dim(0), image.shape().dim(1));
    let map = detect_map(&result, h, w, &cfg, args.tau_rel).map_err(crate::classify)?;

    if let Some(path) = &args.out_map {
        atomic::write_atomic(path, &lrrt::encode(&map))
            .map_err(|e| crate::io_error("writing confidence map", e))?;
    }
    let stats = Stats {
        patch_rows: rows,
        patch_cols: cols,
        iterations: result.iterations,
        converged: result.converged,
        residual: result.residual,
        rank_b: result.rank_b,
        nnz_t: result.nnz_t,
    };
    let stats_json = serde_json::to_string_pretty(&stats).expect("stats serialize");
    if let Some(path) = &args.stats {
        atomic::write_atomic(path, stats_json.as_bytes())
            .map_err(|e| crate::io_error("writing stats", e))?;
    }
    println!("{}", serde_json::to_string(&stats).expect("stats serialize"));
    Ok(())
}
