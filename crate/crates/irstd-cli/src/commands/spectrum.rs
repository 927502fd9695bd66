//! `svspectrum`: singular values of an image's patch matrix.

use std::path::PathBuf;

use clap::Args;
use irstd_core::lowrank::{energy_rank, singular_spectrum, PatchConfig};
use serde::Serialize;

use crate::commands::echo_config;
use crate::pgm;
use crate::{atomic, RunError, RunResult};

#[derive(Args, Debug)]
pub struct SpectrumArgs {
    /// Input grayscale PGM image.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Patch edge length in pixels.
    #[arg(long, default_value_t = 50)]
    pub patch: usize,
    /// Patch stride in pixels.
    #[arg(long, default_value_t = 10)]
    pub stride: usize,
    /// CSV output: index,sigma (descending, normalized by the largest).
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved {
    input: String,
    patch: usize,
    stride: usize,
}

#[derive(Serialize)]
struct Summary {
    values: usize,
    energy_rank_99: usize,
    sigma2_over_sigma1: f64,
}

pub fn run(args: SpectrumArgs) -> RunResult<()> {
    echo_config(
        "svspectrum",
        &Resolved {
            input: args.input.display().to_string(),
            patch: args.patch,
            stride: args.stride,
        },
    );

    let image = pgm::read(&args.input).map_err(RunError::Validation)?;
    let cfg = PatchConfig {
        patch: args.patch,
        stride: args.stride,
    };
    let spectrum = singular_spectrum(&image, &cfg).map_err(crate::classify)?;

    if let Some(path) = &args.out_csv {
        let mut csv = String::from("index,sigma\n");
        for (i, s) in spectrum.iter().enumerate() {
            csv.push_str(&format!("{i},{s:?}\n"));
        }
        atomic::write_atomic(path, csv.as_bytes())
            .map_err(|e| crate::io_error("writing spectrum csv", e))?;
    }

    println!(
        "{}",
        serde_json::to_string(&Summary {
            values: spectrum.len(),
            energy_rank_99: energy_rank(&spectrum, 0.99),
            sigma2_over_sigma1: spectrum.get(1).copied().unwrap_or(0.0),
        })
        .expect("summary serializes")
    );
    Ok(())
}
