//! 8-bit binary PGM (P5) images.

use std::path::Path;

use anyhow::{bail, Context, Result};
use irstd_core::metrics::Mask;
use irstd_core::tensor::{Shape, Tensor};

use crate::atomic::write_atomic;

/// Encode grey values in [0,1] as an 8-bit P5 image (values quantized by
/// round(v * 255)).
pub fn encode(image: &Tensor<f64>) -> Vec<u8> {
    let (h, w) = (image.shape().dim(0), image.shape().dim(1));
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| {
        let q = (v * 255.0).round();
        q.clamp(0.0, 255.0) as u8
    }));
    out
}

pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.w, mask.h).into_bytes();
    out.extend(mask.data.iter().map(|&b| if b { 255u8 } else { 0u8 }));
    out
}

/// Decode a P5 image to grey values in [0,1] (division by 255).
pub fn decode(bytes: &[u8]) -> Result<Tensor<f64>> {
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and comments
        while pos < bytes.len() {
            let b = bytes[pos];
            if b == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            bail!("pgm: truncated header");
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(bytes)? != "P5" {
        bail!("pgm: not a binary P5 file");
    }
    let w: usize = token(bytes)?.parse().context("pgm: bad width")?;
    let h: usize = token(bytes)?.parse().context("pgm: bad height")?;
    let maxval: usize = token(bytes)?.parse().context("pgm: bad maxval")?;
    if maxval != 255 {
        bail!("pgm: only maxval 255 is supported, got {maxval}");
    }
    // exactly one whitespace byte separates header and payload
    pos += 1;
    let payload = bytes
        .get(pos..pos + w * h)
        .context("pgm: truncated payload")?;
    let data = payload.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Tensor::from_vec(Shape::d2(h, w), data)?)
}

/// Decode a P5 image as a binary mask (any nonzero byte is foreground).
pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    let img = decode(bytes)?;
    let (h, w) = (img.shape().dim(0), img.shape().dim(1));
    Ok(Mask {
        h,
        w,
        data: img.data().iter().map(|&v| v > 0.0).collect(),
    })
}

pub fn write(path: &Path, image: &Tensor<f64>) -> Result<()> {
    write_atomic(path, &encode(image)).with_context(|| format!("writing {}", path.display()))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    write_atomic(path, &encode_mask(mask)).with_context(|| format!("writing {}", path.display()))
}

pub fn read(path: &Path) -> Result<Tensor<f64>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode(&bytes)
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_mask(&bytes)
}
