//! Dataset manifest: scene configuration plus per-scene records, enough to
//! regenerate every file byte-for-byte.

use std::path::Path;

use anyhow::{Context, Result};
use irstd_core::synth::{SceneConfig, TargetInfo};
use serde::{Deserialize, Serialize};

use crate::atomic::write_atomic;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneRecord {
    pub index: u64,
    pub image: String,
    pub mask: String,
    /// Minimum per-target signal-to-clutter ratio; null for empty scenes.
    pub scr: Option<f64>,
    pub targets: Vec<TargetInfo>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub scene_config: SceneConfig,
    pub count: usize,
    pub scenes: Vec<SceneRecord>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).context("parsing manifest JSON")
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_NAME);
        write_atomic(&path, self.to_json().as_bytes())
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text =
            std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text)
    }
}

pub fn image_name(index: u64) -> String {
    format!("img_{index:05}.pgm")
}

pub fn mask_name(index: u64) -> String {
    format!("mask_{index:05}.pgm")
}
