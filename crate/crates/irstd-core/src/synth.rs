//! Synthetic scene generation: low-rank background + Gaussian targets +
//! sensor noise, each drawn from an independent per-scene substream so
//! components are individually reproducible.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::Result;
use crate::metrics::Mask;
use crate::rng::Stream;
use crate::tensor::{Shape, Tensor};

const BG_LABEL: u64 = 1;
const TARGET_LABEL: u64 = 2;
const NOISE_LABEL: u64 = 3;

/// Scene generation parameters.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SceneConfig {
    pub h: usize,
    pub w: usize,
    /// Background rank (number of outer-product components).
    pub bg_rank: usize,
    /// Gaussian smoothing length of the background factors, in pixels.
    pub bg_smooth: f64,
    pub n_targets: usize,
    /// Target peak amplitude in (0, 1].
    pub target_amp: f64,
    /// Target Gaussian radius in pixels.
    pub target_sigma: f64,
    /// Noise standard deviation on the 0-255 grey scale.
    pub noise_sigma: f64,
    /// Mask threshold as a fraction of the amplitude.
    pub mask_frac: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            h: 64,
            w: 64,
            bg_rank: 3,
            bg_smooth: 8.0,
            n_targets: 2,
            target_amp: 0.35,
            target_sigma: 1.2,
            noise_sigma: 10.0,
            mask_frac: 0.5,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h < 32 || self.w < 32 {
            return Err(crate::invalid_arg!(
                "scene: extents must be >= 32, got {}x{}",
                self.h,
                self.w
            ));
        }
        if self.bg_rank == 0 {
            return Err(crate::invalid_arg!("scene: bg_rank must be >= 1"));
        }
        if self.target_sigma <= 0.0 {
            return Err(crate::invalid_arg!("scene: target_sigma must be > 0"));
        }
        if self.noise_sigma < 0.0 {
            return Err(crate::invalid_arg!("scene: noise_sigma must be >= 0"));
        }
        if !(0.0 < self.target_amp && self.target_amp <= 1.0) {
            return Err(crate::invalid_arg!("scene: target_amp must be in (0,1]"));
        }
        if !(0.0 < self.mask_frac && self.mask_frac < 1.0) {
            return Err(crate::invalid_arg!("scene: mask_frac must be in (0,1)"));
        }
        Ok(())
    }
}

/// One placed target.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TargetInfo {
    pub cy: f64,
    pub cx: f64,
    pub amp: f64,
    pub sigma: f64,
}

/// A generated sample.
#[derive(Clone, Debug)]
pub struct Scene {
    /// H x W image in [0, 1].
    pub image: Tensor<f64>,
    pub mask: Mask,
    pub targets: Vec<TargetInfo>,
    /// Worst-case (minimum) per-target signal-to-clutter ratio of the final
    /// image; `None` when the scene has no targets.
    pub scr: Option<f64>,
}

/// Truncated, renormalized Gaussian blur of a vector.
fn gaussian_smooth(raw: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return raw.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|k| Float::exp(-0.5 * (k as f64 / sigma) * (k as f64 / sigma)))
        .collect();
    let n = raw.len() as i64;
    let mut out = Vec::with_capacity(raw.len());
    for i in 0..n {
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (j, &w) in weights.iter().enumerate() {
            let idx = i + (j as i64 - radius);
            if idx >= 0 && idx < n {
                acc += w * raw[idx as usize];
                wsum += w;
            }
        }
        out.push(acc / wsum);
    }
    out
}

/// Smoothed positive factor in [0.7, 1.3] with unit baseline.
fn positive_factor(len: usize, sigma: f64, rng: &mut Stream) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.normal()).collect();
    let sm = gaussian_smooth(&raw, sigma);
    let peak = sm.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak == 0.0 {
        return vec![1.0; len];
    }
    sm.iter().map(|&v| 1.0 + 0.3 * v / peak).collect()
}

/// Low-rank background: a sum of `rank` positive outer products, scaled so
/// the peak value is 0.7. All values land inside [0.1, 0.7] (the factor
/// construction bounds the max/min ratio below 7) and the matrix rank
/// stays at most `rank` because the rescale is a pure scaling.
pub fn gen_background(
    h: usize,
    w: usize,
    rank: usize,
    smooth: f64,
    rng: &mut Stream,
) -> Tensor<f64> {
    let mut data = vec![0.0; h * w];
    for _ in 0..rank {
        let u = positive_factor(h, smooth, rng);
        let v = positive_factor(w, smooth, rng);
        for y in 0..h {
            let uy = u[y];
            let row = &mut data[y * w..][..w];
            for (cell, &vx) in row.iter_mut().zip(&v) {
                *cell += uy * vx;
            }
        }
    }
    let peak = data.iter().fold(0.0f64, |m, &v| m.max(v));
    let scale = 0.7 / peak;
    for v in &mut data {
        *v *= scale;
    }
    Tensor::from_vec(Shape::d2(h, w), data).expect("background shape")
}

/// Additive target field and its mask. Centers are kept 3 sigma from the
/// borders and 6 sigma apart; placement fails after 1000 rejected draws
/// per target, naming the achievable count.
pub fn place_targets(
    h: usize,
    w: usize,
    n: usize,
    amp: f64,
    sigma: f64,
    mask_frac: f64,
    rng: &mut Stream,
) -> Result<(Tensor<f64>, Mask, Vec<TargetInfo>)> {
    let margin = 3.0 * sigma;
    let mut targets: Vec<TargetInfo> = Vec::with_capacity(n);
    if n > 0 && (h as f64 - 1.0 <= 2.0 * margin || w as f64 - 1.0 <= 2.0 * margin) {
        return Err(crate::invalid_arg!(
            "place_targets: image {h}x{w} too small for margin {margin}"
        ));
    }
    for placed in 0..n {
        let mut ok = None;
        for _attempt in 0..1000 {
            let cy = rng.uniform_in(margin, h as f64 - 1.0 - margin);
            let cx = rng.uniform_in(margin, w as f64 - 1.0 - margin);
            let clear = targets.iter().all(|t| {
                let dy = t.cy - cy;
                let dx = t.cx - cx;
                (dy * dy + dx * dx).sqrt() >= 6.0 * sigma
            });
            if clear {
                ok = Some((cy, cx));
                break;
            }
        }
        match ok {
            Some((cy, cx)) => targets.push(TargetInfo {
                cy,
                cx,
                amp,
                sigma,
            }),
            None => {
                return Err(crate::invalid_arg!(
                    "place_targets: placed only {placed} of {n} targets under the \
                     separation constraint"
                ))
            }
        }
    }

    let mut field = vec![0.0; h * w];
    for t in &targets {
        let inv = 1.0 / (2.0 * t.sigma * t.sigma);
        for y in 0..h {
            let dy = y as f64 - t.cy;
            let row = &mut field[y * w..][..w];
            for (x, cell) in row.iter_mut().enumerate() {
                let dx = x as f64 - t.cx;
                *cell += t.amp * Float::exp(-(dy * dy + dx * dx) * inv);
            }
        }
    }
    let threshold = mask_frac * amp;
    let mask = Mask {
        h,
        w,
        data: field.iter().map(|&v| v > threshold).collect(),
    };
    Ok((Tensor::from_vec(Shape::d2(h, w), field)?, mask, targets))
}

/// Zero-mean Gaussian noise field with standard deviation sigma_n/255.
pub fn noise_field(h: usize, w: usize, sigma_n: f64, rng: &mut Stream) -> Tensor<f64> {
    let s = sigma_n / 255.0;
    Tensor::from_fn(Shape::d2(h, w), |_| s * rng.normal())
}

/// image + noise, clamped to [0, 1].
pub fn add_noise(image: &Tensor<f64>, sigma_n: f64, rng: &mut Stream) -> Tensor<f64> {
    let noise = noise_field(image.shape().dim(0), image.shape().dim(1), sigma_n, rng);
    Tensor::from_fn(image.shape(), |i| {
        (image.data()[i] + noise.data()[i]).clamp(0.0, 1.0)
    })
}

/// Signal-to-clutter ratio of one target: (mu_t - mu_b) / sigma_b, with
/// mu_t over the target's half-maximum disc and mu_b, sigma_b over a
/// 10-pixel-wide annulus around it, excluding all mask pixels. Returns
/// +inf when the annulus is flat (sigma_b = 0).
pub fn scr(image: &Tensor<f64>, target: &TargetInfo, exclude: &Mask) -> f64 {
    let (h, w) = (image.shape().dim(0), image.shape().dim(1));
    let r_half = target.sigma * (2.0 * core::f64::consts::LN_2).sqrt();
    let r_out = r_half + 10.0;

    let mut t_sum = 0.0;
    let mut t_n = 0usize;
    let mut b_sum = 0.0;
    let mut b_sum2 = 0.0;
    let mut b_n = 0usize;

    let y0 = (target.cy - r_out).floor().max(0.0) as usize;
    let y1 = ((target.cy + r_out).ceil() as usize).min(h - 1);
    let x0 = (target.cx - r_out).floor().max(0.0) as usize;
    let x1 = ((target.cx + r_out).ceil() as usize).min(w - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dy = y as f64 - target.cy;
            let dx = x as f64 - target.cx;
            let d = (dy * dy + dx * dx).sqrt();
            let v = image.data()[y * w + x];
            if d <= r_half {
                t_sum += v;
                t_n += 1;
            } else if d <= r_out && !exclude.get(y, x) {
                b_sum += v;
                b_sum2 += v * v;
                b_n += 1;
            }
        }
    }
    if t_n == 0 {
        // degenerate tiny sigma: fall back to the nearest pixel
        let y = (target.cy.round().max(0.0) as usize).min(h - 1);
        let x = (target.cx.round().max(0.0) as usize).min(w - 1);
        t_sum = image.data()[y * w + x];
        t_n = 1;
    }
    if b_n == 0 {
        return f64::INFINITY;
    }
    let mu_t = t_sum / t_n as f64;
    let mu_b = b_sum / b_n as f64;
    let var_b = (b_sum2 / b_n as f64 - mu_b * mu_b).max(0.0);
    let sigma_b = var_b.sqrt();
    if sigma_b == 0.0 {
        return f64::INFINITY;
    }
    (mu_t - mu_b) / sigma_b
}

/// Generate scene `index` of the stream defined by `cfg.seed`. Background,
/// targets and noise draw from independent substreams, so each component
/// can be regenerated in isolation.
pub fn gen_scene(cfg: &SceneConfig, index: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut bg_rng = Stream::derive(cfg.seed, BG_LABEL, index);
    let bg = gen_background(cfg.h, cfg.w, cfg.bg_rank, cfg.bg_smooth, &mut bg_rng);

    let mut tgt_rng = Stream::derive(cfg.seed, TARGET_LABEL, index);
    let (field, mask, targets) = place_targets(
        cfg.h,
        cfg.w,
        cfg.n_targets,
        cfg.target_amp,
        cfg.target_sigma,
        cfg.mask_frac,
        &mut tgt_rng,
    )?;

    let mut noise_rng = Stream::derive(cfg.seed, NOISE_LABEL, index);
    let noise = noise_field(cfg.h, cfg.w, cfg.noise_sigma, &mut noise_rng);

    let image = Tensor::from_fn(Shape::d2(cfg.h, cfg.w), |i| {
        (bg.data()[i] + field.data()[i] + noise.data()[i]).clamp(0.0, 1.0)
    });

    let scr_min = targets
        .iter()
        .map(|t| scr(&image, t, &mask))
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.min(s))));

    Ok(Scene {
        image,
        mask,
        targets,
        scr: scr_min,
    })
}
