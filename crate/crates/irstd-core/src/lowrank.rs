//! Classical patch-image low-rank baseline.
//!
//! An image is rearranged into a matrix whose columns are vectorized
//! sliding-window patches; the background occupies a low-dimensional
//! column space while small targets appear as sparse outliers. The matrix
//! is split into low-rank + sparse parts by inexact augmented Lagrangian
//! iteration with singular-value thresholding, and the sparse part folded
//! back to the image domain gives a training-free detector.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::svd::{frobenius_norm, spectral_norm, svd};
use crate::tensor::{Shape, Tensor};

/// Sliding-window geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PatchConfig {
    pub patch: usize,
    pub stride: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            patch: 50,
            stride: 10,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.stride == 0 || self.stride > self.patch {
            return Err(crate::invalid_arg!(
                "patch config: need 0 < stride <= patch, got stride {} patch {}",
                self.stride,
                self.patch
            ));
        }
        if self.patch > h || self.patch > w {
            return Err(crate::invalid_arg!(
                "patch config: patch {} larger than image {h}x{w}",
                self.patch
            ));
        }
        Ok(())
    }

    /// Patch grid extents (rows, cols) for an HxW image.
    pub fn grid(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - self.patch) / self.stride + 1,
            (w - self.patch) / self.stride + 1,
        )
    }
}

/// Rearrange an image into its p^2 x n patch matrix. Column (i, j) in
/// row-major grid order holds the vectorized patch at offset
/// (i*stride, j*stride).
pub fn build_patch_image(img: &Tensor<f64>, cfg: &PatchConfig) -> Result<Tensor<f64>> {
    let (h, w) = (img.shape().dim(0), img.shape().dim(1));
    cfg.validate(h, w)?;
    let p = cfg.patch;
    let (gr, gc) = cfg.grid(h, w);
    let n = gr * gc;
    let mut data = vec![0.0; p * p * n];
    for gi in 0..gr {
        for gj in 0..gc {
            let col = gi * gc + gj;
            let (y0, x0) = (gi * cfg.stride, gj * cfg.stride);
            for py in 0..p {
                let src = &img.data()[(y0 + py) * w + x0..][..p];
                for (px, &v) in src.iter().enumerate() {
                    data[(py * p + px) * n + col] = v;
                }
            }
        }
    }
    Tensor::from_vec(Shape::d2(p * p, n), data)
}

/// Result of folding a patch matrix back to image space.
pub struct Folded {
    pub image: Tensor<f64>,
    /// Pixels not covered by any patch (possible for stride close to
    /// patch); they are left at zero.
    pub uncovered: usize,
}

/// Average overlapping patch contributions back into an HxW image.
/// Exact left inverse of [`build_patch_image`] wherever coverage is
/// positive.
pub fn fold_patch_image(
    m: &Tensor<f64>,
    h: usize,
    w: usize,
    cfg: &PatchConfig,
) -> Result<Folded> {
    cfg.validate(h, w)?;
    let p = cfg.patch;
    let (gr, gc) = cfg.grid(h, w);
    let n = gr * gc;
    if m.shape() != Shape::d2(p * p, n) {
        return Err(Error::ShapeMismatch {
            op: "fold_patch_image",
            expected: Shape::d2(p * p, n),
            got: m.shape(),
        });
    }
    let mut acc = vec![0.0; h * w];
    let mut cover = vec![0u32; h * w];
    for gi in 0..gr {
        for gj in 0..gc {
            let col = gi * gc + gj;
            let (y0, x0) = (gi * cfg.stride, gj * cfg.stride);
            for py in 0..p {
                for px in 0..p {
                    let idx = (y0 + py) * w + x0 + px;
                    acc[idx] += m.data()[(py * p + px) * n + col];
                    cover[idx] += 1;
                }
            }
        }
    }
    let mut uncovered = 0;
    for (a, &c) in acc.iter_mut().zip(&cover) {
        if c == 0 {
            uncovered += 1;
            *a = 0.0;
        } else {
            *a /= c as f64;
        }
    }
    Ok(Folded {
        image: Tensor::from_vec(Shape::d2(h, w), acc)?,
        uncovered,
    })
}

/// Singular value thresholding: U max(S - tau, 0) V^T, the proximal
/// operator of the nuclear norm. Also returns the thresholded singular
/// values (rank and nuclear norm come for free).
pub fn svt(m: &Tensor<f64>, tau: f64) -> Result<(Tensor<f64>, Vec<f64>)> {
    if tau < 0.0 {
        return Err(crate::invalid_arg!("svt: tau must be >= 0, got {tau}"));
    }
    let dec = svd(m)?;
    let (rows, cols) = (m.shape().dim(0), m.shape().dim(1));
    let r = dec.sigma.len();
    let kept: Vec<f64> = dec.sigma.iter().map(|&s| (s - tau).max(0.0)).collect();
    let mut out = vec![0.0; rows * cols];
    for (j, &s) in kept.iter().enumerate() {
        if s == 0.0 {
            continue; // sigma is sorted descending; the rest are zero too
        }
        for i in 0..rows {
            let us = dec.u.data()[i * r + j] * s;
            if us == 0.0 {
                continue;
            }
            let vrow = &dec.vt.data()[j * cols..][..cols];
            let orow = &mut out[i * cols..][..cols];
            for (o, &v) in orow.iter_mut().zip(vrow) {
                *o += us * v;
            }
        }
    }
    Ok((Tensor::from_vec(m.shape(), out)?, kept))
}

/// Elementwise soft threshold sign(x) max(|x| - tau, 0), the proximal
/// operator of the weighted l1 norm.
pub fn soft_threshold(m: &Tensor<f64>, tau: f64) -> Tensor<f64> {
    m.map(|v| {
        let mag = v.abs() - tau;
        if mag > 0.0 {
            mag * v.signum()
        } else {
            0.0
        }
    })
}

/// Solver options; the defaults are the standard inexact-ALM constants.
#[derive(Clone, Copy, Debug)]
pub struct RpcaOptions {
    /// Sparsity weight; `None` selects 1/sqrt(max(m, n)).
    pub lambda: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Initial penalty; `None` selects 1.25 / |D|_2.
    pub mu0: Option<f64>,
    pub rho: f64,
}

impl Default for RpcaOptions {
    fn default() -> Self {
        RpcaOptions {
            lambda: None,
            tol: 1e-7,
            max_iter: 500,
            mu0: None,
            rho: 1.5,
        }
    }
}

/// Low-rank + sparse decomposition of a data matrix.
#[derive(Clone, Debug)]
pub struct RpcaResult {
    pub b: Tensor<f64>,
    pub t: Tensor<f64>,
    pub iterations: usize,
    /// |D - B - T|_F / |D|_F at exit.
    pub residual: f64,
    pub converged: bool,
    pub rank_b: usize,
    pub nnz_t: usize,
    /// |B|_* + lambda |T|_1 after each iteration.
    pub objective: Vec<f64>,
}

/// Inexact augmented Lagrangian iteration for
/// min |B|_* + lambda |T|_1 s.t. D = B + T.
///
/// Per iteration: B <- svt(D - T + Y/mu, 1/mu), T <- shrink(D - B + Y/mu,
/// lambda/mu), Y <- Y + mu (D - B - T), mu <- min(rho mu, mu_max); stops
/// when the relative residual drops below `tol`.
pub fn rpca_ialm(d: &Tensor<f64>, opts: &RpcaOptions) -> Result<RpcaResult> {
    if d.shape().rank() != 2 {
        return Err(crate::invalid_arg!(
            "rpca: expected rank-2 input, got {}",
            d.shape()
        ));
    }
    if !d.is_finite() {
        return Err(Error::Numerical(alloc::string::String::from(
            "rpca: non-finite input",
        )));
    }
    let (m, n) = (d.shape().dim(0), d.shape().dim(1));
    let lambda = opts.lambda.unwrap_or(1.0 / num_traits::Float::sqrt(m.max(n) as f64));
    let d_norm = frobenius_norm(d);
    if d_norm == 0.0 {
        return Ok(RpcaResult {
            b: Tensor::zeros(d.shape()),
            t: Tensor::zeros(d.shape()),
            iterations: 0,
            residual: 0.0,
            converged: true,
            rank_b: 0,
            nnz_t: 0,
            objective: Vec::new(),
        });
    }
    let sigma1 = spectral_norm(d, 50);
    let mut mu = opts.mu0.unwrap_or(1.25 / sigma1);
    let mu_max = mu * 1e7;

    let numel = d.numel();
    let mut b = Tensor::zeros(d.shape());
    let mut t = Tensor::zeros(d.shape());
    let mut y = Tensor::<f64>::zeros(d.shape());
    let mut objective = Vec::new();
    let mut residual = 1.0;
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=opts.max_iter {
        iterations = it;
        // B-update
        let mut arg = vec![0.0; numel];
        for i in 0..numel {
            arg[i] = d.data()[i] - t.data()[i] + y.data()[i] / mu;
        }
        let (b_new, kept) = svt(&Tensor::from_vec(d.shape(), arg)?, 1.0 / mu)?;
        b = b_new;
        let nuclear: f64 = kept.iter().sum();

        // T-update
        let mut arg = vec![0.0; numel];
        for i in 0..numel {
            arg[i] = d.data()[i] - b.data()[i] + y.data()[i] / mu;
        }
        t = soft_threshold(&Tensor::from_vec(d.shape(), arg)?, lambda / mu);

        // multiplier and penalty
        let mut res_norm = 0.0;
        {
            let yd = y.data_mut();
            for i in 0..numel {
                let r = d.data()[i] - b.data()[i] - t.data()[i];
                yd[i] += mu * r;
                res_norm += r * r;
            }
        }
        mu = (mu * opts.rho).min(mu_max);

        let l1: f64 = t.data().iter().map(|v| v.abs()).sum();
        objective.push(nuclear + lambda * l1);

        residual = num_traits::Float::sqrt(res_norm) / d_norm;
        if residual < opts.tol {
            converged = true;
            break;
        }
    }

    let rank_b = {
        let dec = svd(&b)?;
        let cut = dec.sigma.first().copied().unwrap_or(0.0) * 1e-9;
        dec.sigma.iter().filter(|&&s| s > cut).count()
    };
    let nnz_t = t.data().iter().filter(|&&v| v != 0.0).count();

    Ok(RpcaResult {
        b,
        t,
        iterations,
        residual,
        converged,
        rank_b,
        nnz_t,
        objective,
    })
}

/// Descending singular values of the patch-image matrix, normalized by the
/// largest.
pub fn singular_spectrum(img: &Tensor<f64>, cfg: &PatchConfig) -> Result<Vec<f64>> {
    let m = build_patch_image(img, cfg)?;
    let dec = svd(&m)?;
    let s1 = dec.sigma.first().copied().unwrap_or(0.0);
    if s1 == 0.0 {
        return Ok(dec.sigma);
    }
    Ok(dec.sigma.iter().map(|&s| s / s1).collect())
}

/// Smallest k such that the top-k singular values capture `frac` of the
/// spectral energy (sum of squares).
pub fn energy_rank(spectrum: &[f64], frac: f64) -> usize {
    let total: f64 = spectrum.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (k, s) in spectrum.iter().enumerate() {
        acc += s * s;
        if acc >= frac * total {
            return k + 1;
        }
    }
    spectrum.len()
}

/// Training-free detector: RPCA on the patch image, sparse part folded
/// back, clamped at zero, entries below `tau_rel` of the peak suppressed,
/// then peak-normalized to [0, 1].
pub fn rpca_detect(
    img: &Tensor<f64>,
    cfg: &PatchConfig,
    tau_rel: f64,
    opts: &RpcaOptions,
) -> Result<Tensor<f64>> {
    if img.shape().rank() != 2 {
        return Err(crate::invalid_arg!(
            "rpca_detect: expected rank-2 image, got {}",
            img.shape()
        ));
    }
    if !(0.0..=1.0).contains(&tau_rel) {
        return Err(crate::invalid_arg!(
            "rpca_detect: tau_rel must lie in [0,1], got {tau_rel}"
        ));
    }
    let (h, w) = (img.shape().dim(0), img.shape().dim(1));
    let d = build_patch_image(img, cfg)?;
    let result = rpca_ialm(&d, opts)?;
    detect_map(&result, h, w, cfg, tau_rel)
}

/// Post-process a finished decomposition into a confidence map (see
/// [`rpca_detect`]); lets callers reuse one solve for both statistics and
/// the map.
pub fn detect_map(
    result: &RpcaResult,
    h: usize,
    w: usize,
    cfg: &PatchConfig,
    tau_rel: f64,
) -> Result<Tensor<f64>> {
    if !(0.0..=1.0).contains(&tau_rel) {
        return Err(crate::invalid_arg!(
            "rpca_detect: tau_rel must lie in [0,1], got {tau_rel}"
        ));
    }
    let folded = fold_patch_image(&result.t, h, w, cfg)?;
    let mut map = folded.image;
    let mut peak = 0.0f64;
    for v in map.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
        peak = peak.max(*v);
    }
    if peak > 0.0 {
        let floor = tau_rel * peak;
        for v in map.data_mut() {
            if *v < floor {
                *v = 0.0;
            } else {
                *v /= peak;
            }
        }
    }
    Ok(map)
}
