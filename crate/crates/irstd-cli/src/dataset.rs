//! Loading image/mask directories into training samples.

use std::path::Path;

use anyhow::{bail, Context, Result};
use irstd_core::scalar::Scalar;
use irstd_core::train::{split_indices, Sample};

use crate::manifest::Manifest;
use crate::pgm;

/// Load every scene listed in a dataset manifest.
pub fn load_dir<E: Scalar>(dir: &Path) -> Result<Vec<Sample<E>>> {
    let manifest = Manifest::load(dir)?;
    let mut samples = Vec::with_capacity(manifest.scenes.len());
    for rec in &manifest.scenes {
        let image = pgm::read(&dir.join(&rec.image))?;
        let mask = pgm::read_mask(&dir.join(&rec.mask))?;
        if (mask.h, mask.w) != (image.shape().dim(0), image.shape().dim(1)) {
            bail!(
                "dataset: {} and {} disagree on size",
                rec.image,
                rec.mask
            );
        }
        samples.push(Sample {
            image: image.cast(),
            mask,
        });
    }
    if samples.is_empty() {
        bail!("dataset: no scenes listed in {}", dir.display());
    }
    Ok(samples)
}

/// Deterministic 80/20 train/validation split by index hash.
pub fn load_split<E: Scalar>(dir: &Path) -> Result<(Vec<Sample<E>>, Vec<Sample<E>>)> {
    let samples = load_dir::<E>(dir)?;
    let (train_idx, val_idx) = split_indices(samples.len(), 0.2);
    let mut train = Vec::with_capacity(train_idx.len());
    let mut val = Vec::with_capacity(val_idx.len());
    let mut tagged: Vec<Option<Sample<E>>> = samples.into_iter().map(Some).collect();
    for i in train_idx {
        train.push(tagged[i].take().context("split index out of range")?);
    }
    for i in val_idx {
        val.push(tagged[i].take().context("split index out of range")?);
    }
    Ok((train, val))
}
