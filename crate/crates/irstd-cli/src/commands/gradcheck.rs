//! `gradcheck`: finite-difference verification of the assembled network.

use clap::Args;
use irstd_core::gradcheck::model_grad_check;
use irstd_core::loss::LossWeights;
use irstd_core::net::{Model, ModelConfig};
use irstd_core::rng::Stream;
use irstd_core::tensor::{Shape, Tensor};
use serde::Serialize;

use crate::commands::echo_config;
use crate::{RunError, RunResult};

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Architecture preset to verify.
    #[arg(long, value_parser = ["tiny", "default"], default_value = "tiny")]
    pub config: String,
    /// Pass threshold on the maximum relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Probed coordinates per parameter tensor.
    #[arg(long, default_value_t = 6)]
    pub coords: usize,
    /// Seed for the probe data.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Serialize)]
struct Resolved {
    config: String,
    tol: f64,
    coords: usize,
    seed: u64,
}

#[derive(Serialize)]
struct Outcome {
    max_rel_err: f64,
    pass: bool,
    coords_checked: usize,
}

pub fn run(args: GradcheckArgs) -> RunResult<()> {
    echo_config(
        "gradcheck",
        &Resolved {
            config: args.config.clone(),
            tol: args.tol,
            coords: args.coords,
            seed: args.seed,
        },
    );

    let (model_cfg, hw) = match args.config.as_str() {
        "default" => (ModelConfig::default(), 16),
        _ => (
            ModelConfig {
                stages: 2,
                channels: vec![4, 8],
                resblocks_per_encoder_stage: 2,
                attention_blocks: 1,
                groupnorm_groups: 8,
                seed: args.seed,
            },
            16,
        ),
    };
    let model = Model::<f64>::build(model_cfg).map_err(crate::classify)?;

    let mut rng = Stream::seed(args.seed ^ 0x67726164);
    let image = Tensor::from_fn(Shape::d4(1, 1, hw, hw), |_| rng.uniform());
    let mask = Tensor::from_fn(Shape::d4(1, 1, hw, hw), |i| {
        if i % 47 == 3 {
            1.0
        } else {
            0.0
        }
    });

    let report = model_grad_check(
        &model,
        &image,
        &mask,
        &LossWeights::default(),
        args.coords,
        args.tol,
    )
    .map_err(crate::classify)?;

    println!(
        "{}",
        serde_json::to_string(&Outcome {
            max_rel_err: report.max_rel_err,
            pass: report.pass,
            coords_checked: report.coords_checked,
        })
        .expect("outcome serializes")
    );
    eprintln!(
        "max relative error {:.3e} over {} coordinates: {}",
        report.max_rel_err,
        report.coords_checked,
        if report.pass { "PASS" } else { "FAIL" }
    );
    if report.pass {
        Ok(())
    } else {
        Err(RunError::Runtime(anyhow::anyhow!(
            "gradient check failed at tolerance {}",
            args.tol
        )))
    }
}
