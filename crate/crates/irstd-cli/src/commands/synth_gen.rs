//! `synth-gen`: write a reproducible synthetic dataset (PGM images, PGM
//! masks, JSON manifest).

use std::path::PathBuf;

use anyhow::anyhow;
use clap::Args;
use irstd_core::synth::{gen_scene, SceneConfig};
use serde::Serialize;

use crate::commands::{echo_config, load_json};
use crate::manifest::{image_name, mask_name, Manifest, SceneRecord};
use crate::pgm;
use crate::{RunError, RunResult};

#[derive(Args, Debug)]
pub struct SynthGenArgs {
    /// Output directory for images, masks and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of scenes to generate.
    #[arg(long)]
    pub count: Option<usize>,
    /// JSON file holding a base scene configuration (flags override it).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Regenerate byte-identical files from an existing manifest instead of
    /// a fresh configuration; conflicts with the scene flags below.
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,
    /// Master seed; per-scene streams derive from (seed, index).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Image height in pixels.
    #[arg(long)]
    pub height: Option<usize>,
    /// Image width in pixels.
    #[arg(long)]
    pub width: Option<usize>,
    /// Background rank (outer-product components).
    #[arg(long)]
    pub bg_rank: Option<usize>,
    /// Background smoothing length in pixels.
    #[arg(long)]
    pub bg_smooth: Option<f64>,
    /// Targets per scene.
    #[arg(long)]
    pub n_targets: Option<usize>,
    /// Target peak amplitude in (0, 1].
    #[arg(long)]
    pub target_amp: Option<f64>,
    /// Target Gaussian radius in pixels.
    #[arg(long)]
    pub target_sigma: Option<f64>,
    /// Noise standard deviation on the 0-255 grey scale.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Mask threshold as a fraction of the target amplitude.
    #[arg(long)]
    pub mask_frac: Option<f64>,
}

#[derive(Serialize)]
struct Resolved<'a> {
    scene_config: &'a SceneConfig,
    count: usize,
    out: String,
}

pub fn run(args: SynthGenArgs) -> RunResult<()> {
    let (cfg, count) = resolve(&args)?;
    echo_config(
        "synth-gen",
        &Resolved {
            scene_config: &cfg,
            count,
            out: args.out.display().to_string(),
        },
    );

    let mut scenes = Vec::with_capacity(count);
    for index in 0..count as u64 {
        let scene = gen_scene(&cfg, index).map_err(crate::classify)?;
        let image_file = image_name(index);
        let mask_file = mask_name(index);
        pgm::write(&args.out.join(&image_file), &scene.image).map_err(RunError::Runtime)?;
        pgm::write_mask(&args.out.join(&mask_file), &scene.mask).map_err(RunError::Runtime)?;
        scenes.push(SceneRecord {
            index,
            image: image_file,
            mask: mask_file,
            scr: scene.scr,
            targets: scene.targets,
        });
    }
    let manifest = Manifest {
        scene_config: cfg,
        count,
        scenes,
    };
    manifest.save(&args.out).map_err(RunError::Runtime)?;
    eprintln!("wrote {count} scenes to {}", args.out.display());
    Ok(())
}

fn resolve(args: &SynthGenArgs) -> RunResult<(SceneConfig, usize)> {
    if let Some(m) = &args.from_manifest {
        let overrides = args.count.is_some()
            || args.config.is_some()
            || args.seed.is_some()
            || args.height.is_some()
            || args.width.is_some()
            || args.bg_rank.is_some()
            || args.bg_smooth.is_some()
            || args.n_targets.is_some()
            || args.target_amp.is_some()
            || args.target_sigma.is_some()
            || args.noise_sigma.is_some()
            || args.mask_frac.is_some();
        if overrides {
            return Err(RunError::Validation(anyhow!(
                "--from-manifest regenerates an exact dataset; scene flags are not allowed"
            )));
        }
        let text = std::fs::read_to_string(m)
            .map_err(|e| crate::io_error(&format!("reading {}", m.display()), e))?;
        let manifest = Manifest::from_json(&text).map_err(RunError::Validation)?;
        return Ok((manifest.scene_config, manifest.count));
    }

    let mut cfg: SceneConfig = match &args.config {
        Some(path) => load_json(path).map_err(RunError::Validation)?,
        None => SceneConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.height {
        cfg.h = v;
    }
    if let Some(v) = args.width {
        cfg.w = v;
    }
    if let Some(v) = args.bg_rank {
        cfg.bg_rank = v;
    }
    if let Some(v) = args.bg_smooth {
        cfg.bg_smooth = v;
    }
    if let Some(v) = args.n_targets {
        cfg.n_targets = v;
    }
    if let Some(v) = args.target_amp {
        cfg.target_amp = v;
    }
    if let Some(v) = args.target_sigma {
        cfg.target_sigma = v;
    }
    if let Some(v) = args.noise_sigma {
        cfg.noise_sigma = v;
    }
    if let Some(v) = args.mask_frac {
        cfg.mask_frac = v;
    }
    cfg.validate().map_err(crate::classify)?;
    // count = 0 is legal: the run writes just an empty manifest
    Ok((cfg, args.count.unwrap_or(10)))
}
