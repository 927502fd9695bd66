//! Forward and adjoint compute kernels.
//!
//! Convolutions run as im2col + a register-blocked matmul; every output
//! element is written by exactly one fixed-order pass, so results do not
//! depend on any scheduling. The straightforward nested-loop formulations
//! live in the test module as oracles.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::scalar::Scalar;

/// Output extent of a strided convolution along one axis.
#[inline]
pub fn conv_out_extent(extent: usize, k: usize, stride: usize, padding: usize) -> usize {
    (extent + 2 * padding - k) / stride + 1
}

/// Range of output coordinates x such that `x*stride + offset` lands inside
/// `[0, extent)`, clipped to `[0, out_extent)`. `offset = k_idx - padding`.
#[inline]
fn valid_range(extent: usize, out_extent: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let start = if offset < 0 {
        ((-offset + s - 1) / s) as usize
    } else {
        0
    };
    let last_num = extent as isize - 1 - offset;
    if last_num < 0 {
        return (0, 0);
    }
    let end = ((last_num / s) as usize + 1).min(out_extent);
    (start.min(end), end)
}

// ---------------------------------------------------------------------------
// blocked matmul
// ---------------------------------------------------------------------------

const MR: usize = 4;
const NR: usize = 16;

/// c += a[m,k] * b[k,n], row-major, 4x16 register blocking with a packed
/// B panel so the k-loop streams contiguous memory.
pub fn matmul_block_acc<E: Scalar>(a: &[E], b: &[E], (m, k, n): (usize, usize, usize), c: &mut [E]) {
    let mut panel = vec![E::zero(); k * NR];
    let mut jb = 0;
    while jb < n {
        let nb = NR.min(n - jb);
        for kk in 0..k {
            let src = &b[kk * n + jb..][..nb];
            panel[kk * NR..][..nb].copy_from_slice(src);
            if nb < NR {
                panel[kk * NR + nb..kk * NR + NR].fill(E::zero());
            }
        }
        let mut ib = 0;
        while ib < m {
            let mb = MR.min(m - ib);
            if nb == NR && mb == MR {
                let mut acc = [[E::zero(); NR]; MR];
                for kk in 0..k {
                    let brow = &panel[kk * NR..][..NR];
                    for (r, accr) in acc.iter_mut().enumerate() {
                        let av = a[(ib + r) * k + kk];
                        for (x, &bv) in accr.iter_mut().zip(brow) {
                            *x = *x + av * bv;
                        }
                    }
                }
                for (r, accr) in acc.iter().enumerate() {
                    let crow = &mut c[(ib + r) * n + jb..][..NR];
                    for (cv, &x) in crow.iter_mut().zip(accr) {
                        *cv = *cv + x;
                    }
                }
            } else {
                // edge block: same panel, accumulators padded to NR lanes
                let mut acc = [[E::zero(); NR]; MR];
                for kk in 0..k {
                    let brow = &panel[kk * NR..][..NR];
                    for (r, accr) in acc.iter_mut().enumerate().take(mb) {
                        let av = a[(ib + r) * k + kk];
                        for (x, &bv) in accr.iter_mut().zip(brow) {
                            *x = *x + av * bv;
                        }
                    }
                }
                for (r, accr) in acc.iter().enumerate().take(mb) {
                    let crow = &mut c[(ib + r) * n + jb..][..nb];
                    for (cv, &x) in crow.iter_mut().zip(accr.iter().take(nb)) {
                        *cv = *cv + x;
                    }
                }
            }
            ib += MR;
        }
        jb += NR;
    }
}

/// dst[j, i] = src[i, j] for a rows x cols row-major matrix.
pub fn transpose<E: Scalar>(src: &[E], rows: usize, cols: usize, dst: &mut [E]) {
    for i in 0..rows {
        let row = &src[i * cols..][..cols];
        for (j, &v) in row.iter().enumerate() {
            dst[j * rows + i] = v;
        }
    }
}

const DOT_LANES: usize = 16;

/// Accumulate lane-wise products of two equal-length slices into a
/// persistent 16-lane accumulator. Callers keep the accumulator across many
/// row pairs and reduce once, so the reduction cost amortizes away.
#[inline]
fn dot_into<E: Scalar>(a: &[E], b: &[E], acc: &mut [E; DOT_LANES]) {
    debug_assert_eq!(a.len(), b.len());
    let mut ac = a.chunks_exact(DOT_LANES);
    let mut bc = b.chunks_exact(DOT_LANES);
    for (av, bv) in (&mut ac).zip(&mut bc) {
        for l in 0..DOT_LANES {
            acc[l] = acc[l] + av[l] * bv[l];
        }
    }
    for (&av, &bv) in ac.remainder().iter().zip(bc.remainder()) {
        acc[0] = acc[0] + av * bv;
    }
}

#[inline]
fn reduce_lanes<E: Scalar>(acc: &[E; DOT_LANES]) -> E {
    let mut total = E::zero();
    for &v in acc {
        total = total + v;
    }
    total
}

/// Dot product over contiguous slices.
#[inline]
pub fn dot<E: Scalar>(a: &[E], b: &[E]) -> E {
    let mut acc = [E::zero(); DOT_LANES];
    dot_into(a, b, &mut acc);
    reduce_lanes(&acc)
}

// ---------------------------------------------------------------------------
// im2col / col2im
// ---------------------------------------------------------------------------

/// Gather one sample's padded patches into `patches[cin*k*k, ho*wo]`.
#[allow(clippy::too_many_arguments)]
fn im2col<E: Scalar>(
    input: &[E], // one sample, cin * h * w
    (cin, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
    padding: usize,
    (ho, wo): (usize, usize),
    patches: &mut [E],
) {
    let hw = ho * wo;
    for ci in 0..cin {
        let plane = &input[ci * h * w..][..h * w];
        for ky in 0..k {
            let oy = ky as isize - padding as isize;
            let (y0, y1) = valid_range(h, ho, stride, oy);
            for kx in 0..k {
                let ox = kx as isize - padding as isize;
                let (x0, x1) = valid_range(w, wo, stride, ox);
                let row = &mut patches[(ci * k * k + ky * k + kx) * hw..][..hw];
                if y0 > 0 {
                    row[..y0 * wo].fill(E::zero());
                }
                if y1 < ho {
                    row[y1 * wo..].fill(E::zero());
                }
                for y in y0..y1 {
                    let iy = ((y * stride) as isize + oy) as usize;
                    let src = &plane[iy * w..][..w];
                    let dst = &mut row[y * wo..][..wo];
                    dst[..x0].fill(E::zero());
                    if x1 < wo {
                        dst[x1..].fill(E::zero());
                    }
                    if stride == 1 {
                        let ix0 = (x0 as isize + ox) as usize;
                        dst[x0..x1].copy_from_slice(&src[ix0..ix0 + (x1 - x0)]);
                    } else {
                        for (x, d) in dst[x0..x1].iter_mut().enumerate() {
                            let ix = ((x0 + x) * stride) as isize + ox;
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add the adjoint of [`im2col`]: accumulate patch rows back into
/// one sample's input gradient.
#[allow(clippy::too_many_arguments)]
fn col2im_add<E: Scalar>(
    patches: &[E],
    (cin, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
    padding: usize,
    (ho, wo): (usize, usize),
    d_input: &mut [E],
) {
    let hw = ho * wo;
    for ci in 0..cin {
        let plane = &mut d_input[ci * h * w..][..h * w];
        for ky in 0..k {
            let oy = ky as isize - padding as isize;
            let (y0, y1) = valid_range(h, ho, stride, oy);
            for kx in 0..k {
                let ox = kx as isize - padding as isize;
                let (x0, x1) = valid_range(w, wo, stride, ox);
                let row = &patches[(ci * k * k + ky * k + kx) * hw..][..hw];
                for y in y0..y1 {
                    let iy = ((y * stride) as isize + oy) as usize;
                    let dst = &mut plane[iy * w..][..w];
                    let src = &row[y * wo..][..wo];
                    if stride == 1 {
                        let ix0 = (x0 as isize + ox) as usize;
                        for (d, &s) in dst[ix0..ix0 + (x1 - x0)].iter_mut().zip(&src[x0..x1]) {
                            *d = *d + s;
                        }
                    } else {
                        for (x, &s) in src[x0..x1].iter().enumerate() {
                            let ix = ((x0 + x) * stride) as isize + ox;
                            dst[ix as usize] = dst[ix as usize] + s;
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<E: Scalar>(
    input: &[E],
    (n, cin, h, w): (usize, usize, usize, usize),
    weight: &[E],
    (cout, k): (usize, usize),
    bias: &[E],
    stride: usize,
    padding: usize,
    out: &mut [E],
) {
    let ho = conv_out_extent(h, k, stride, padding);
    let wo = conv_out_extent(w, k, stride, padding);
    let hw = ho * wo;
    let kk2 = cin * k * k;
    debug_assert_eq!(out.len(), n * cout * hw);

    // pointwise conv needs no patch buffer: patches == input plane matrix
    let direct = k == 1 && stride == 1 && padding == 0;
    let mut patches = if direct {
        Vec::new()
    } else {
        vec![E::zero(); kk2 * hw]
    };

    for ni in 0..n {
        let in_sample = &input[ni * cin * h * w..][..cin * h * w];
        let out_sample = &mut out[ni * cout * hw..][..cout * hw];
        for (co, row) in out_sample.chunks_exact_mut(hw).enumerate() {
            row.fill(bias[co]);
        }
        if direct {
            matmul_block_acc(weight, in_sample, (cout, kk2, hw), out_sample);
        } else {
            im2col(
                in_sample,
                (cin, h, w),
                k,
                stride,
                padding,
                (ho, wo),
                &mut patches,
            );
            matmul_block_acc(weight, &patches, (cout, kk2, hw), out_sample);
        }
    }
}

/// Adjoint of [`conv2d_forward`] with respect to the input.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_input<E: Scalar>(
    d_out: &[E],
    (n, cin, h, w): (usize, usize, usize, usize),
    weight: &[E],
    (cout, k): (usize, usize),
    stride: usize,
    padding: usize,
    d_input: &mut [E],
) {
    let ho = conv_out_extent(h, k, stride, padding);
    let wo = conv_out_extent(w, k, stride, padding);
    let hw = ho * wo;
    let kk2 = cin * k * k;

    let mut wt = vec![E::zero(); kk2 * cout];
    transpose(weight, cout, kk2, &mut wt);

    let direct = k == 1 && stride == 1 && padding == 0;
    let mut d_patches = vec![E::zero(); kk2 * hw];
    for ni in 0..n {
        let d_out_sample = &d_out[ni * cout * hw..][..cout * hw];
        let d_in_sample = &mut d_input[ni * cin * h * w..][..cin * h * w];
        if direct {
            matmul_block_acc(&wt, d_out_sample, (kk2, cout, hw), d_in_sample);
        } else {
            d_patches.fill(E::zero());
            matmul_block_acc(&wt, d_out_sample, (kk2, cout, hw), &mut d_patches);
            col2im_add(
                &d_patches,
                (cin, h, w),
                k,
                stride,
                padding,
                (ho, wo),
                d_in_sample,
            );
        }
    }
}

/// Adjoint of [`conv2d_forward`] with respect to weight and bias.
///
/// Wide feature maps use per-tap correlations with persistent lane
/// accumulators (contiguous row dots, no gather); narrow maps, where the
/// rows are shorter than a lane block, go through im2col and the blocked
/// matmul instead.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_params<E: Scalar>(
    d_out: &[E],
    input: &[E],
    dims: (usize, usize, usize, usize),
    (cout, k): (usize, usize),
    stride: usize,
    padding: usize,
    d_weight: &mut [E],
    d_bias: &mut [E],
) {
    let (_, _, _, w) = dims;
    let wo = conv_out_extent(w, k, stride, padding);
    if wo >= 48 && stride == 1 {
        conv2d_backward_params_taps(d_out, input, dims, (cout, k), stride, padding, d_weight, d_bias);
    } else {
        conv2d_backward_params_gemm(d_out, input, dims, (cout, k), stride, padding, d_weight, d_bias);
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_params_taps<E: Scalar>(
    d_out: &[E],
    input: &[E],
    (n, cin, h, w): (usize, usize, usize, usize),
    (cout, k): (usize, usize),
    stride: usize,
    padding: usize,
    d_weight: &mut [E],
    d_bias: &mut [E],
) {
    let ho = conv_out_extent(h, k, stride, padding);
    let wo = conv_out_extent(w, k, stride, padding);
    let hw = ho * wo;

    for ni in 0..n {
        for co in 0..cout {
            let d_out_plane = &d_out[(ni * cout + co) * hw..][..hw];
            let mut b_acc = E::zero();
            for &g in d_out_plane {
                b_acc = b_acc + g;
            }
            d_bias[co] = d_bias[co] + b_acc;

            for ci in 0..cin {
                let in_plane = &input[(ni * cin + ci) * h * w..][..h * w];
                let d_w_tap = &mut d_weight[(co * cin + ci) * k * k..][..k * k];
                for ky in 0..k {
                    let oy = ky as isize - padding as isize;
                    let (y0, y1) = valid_range(h, ho, stride, oy);
                    for kx in 0..k {
                        let ox = kx as isize - padding as isize;
                        let (x0, x1) = valid_range(w, wo, stride, ox);
                        if x0 >= x1 {
                            continue;
                        }
                        let acc = if stride == 1 {
                            let ix0 = (x0 as isize + ox) as usize;
                            let len = x1 - x0;
                            let mut lanes = [E::zero(); DOT_LANES];
                            for y in y0..y1 {
                                let iy = (y as isize + oy) as usize;
                                dot_into(
                                    &d_out_plane[y * wo + x0..][..len],
                                    &in_plane[iy * w + ix0..][..len],
                                    &mut lanes,
                                );
                            }
                            reduce_lanes(&lanes)
                        } else {
                            let mut acc = E::zero();
                            for y in y0..y1 {
                                let iy = ((y * stride) as isize + oy) as usize;
                                let in_row = &in_plane[iy * w..][..w];
                                let d_out_row = &d_out_plane[y * wo..][..wo];
                                for x in x0..x1 {
                                    let ix = ((x * stride) as isize + ox) as usize;
                                    acc = acc + d_out_row[x] * in_row[ix];
                                }
                            }
                            acc
                        };
                        d_w_tap[ky * k + kx] = d_w_tap[ky * k + kx] + acc;
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_params_gemm<E: Scalar>(
    d_out: &[E],
    input: &[E],
    (n, cin, h, w): (usize, usize, usize, usize),
    (cout, k): (usize, usize),
    stride: usize,
    padding: usize,
    d_weight: &mut [E],
    d_bias: &mut [E],
) {
    let ho = conv_out_extent(h, k, stride, padding);
    let wo = conv_out_extent(w, k, stride, padding);
    let hw = ho * wo;
    let kk2 = cin * k * k;

    let direct = k == 1 && stride == 1 && padding == 0;
    let mut patches = if direct {
        Vec::new()
    } else {
        vec![E::zero(); kk2 * hw]
    };
    // patches transposed to [hw, kk2] so d_w = G . P^T runs with the wide
    // extent as the blocked kernel's n dimension
    let mut pt = vec![E::zero(); hw * kk2];
    let mut dw = vec![E::zero(); cout * kk2];

    for ni in 0..n {
        let d_out_sample = &d_out[ni * cout * hw..][..cout * hw];
        let in_sample = &input[ni * cin * h * w..][..cin * h * w];
        for (co, row) in d_out_sample.chunks_exact(hw).enumerate() {
            let mut acc = E::zero();
            for &g in row {
                acc = acc + g;
            }
            d_bias[co] = d_bias[co] + acc;
        }
        if direct {
            transpose(in_sample, kk2, hw, &mut pt);
        } else {
            im2col(
                in_sample,
                (cin, h, w),
                k,
                stride,
                padding,
                (ho, wo),
                &mut patches,
            );
            transpose(&patches, kk2, hw, &mut pt);
        }
        matmul_block_acc(d_out_sample, &pt, (cout, hw, kk2), &mut dw);
    }
    for (dst, &src) in d_weight.iter_mut().zip(&dw) {
        *dst = *dst + src;
    }
}

// ---------------------------------------------------------------------------
// group normalization
// ---------------------------------------------------------------------------

/// Per-(sample, group) statistics saved for the adjoint pass.
#[derive(Clone, Debug)]
pub struct GroupNormStats<E> {
    pub mean: Vec<E>,
    pub inv_std: Vec<E>,
}

#[allow(clippy::too_many_arguments)]
pub fn group_norm_forward<E: Scalar>(
    input: &[E],
    (n, c, h, w): (usize, usize, usize, usize),
    groups: usize,
    gamma: &[E],
    beta: &[E],
    eps: E,
    out: &mut [E],
) -> GroupNormStats<E> {
    let spatial = h * w;
    let cpg = c / groups;
    let group_len = cpg * spatial;
    let mut mean = Vec::with_capacity(n * groups);
    let mut inv_std = Vec::with_capacity(n * groups);

    for ni in 0..n {
        for g in 0..groups {
            let base = (ni * c + g * cpg) * spatial;
            let chunk = &input[base..base + group_len];
            let mut sum = E::zero();
            let mut sum2 = E::zero();
            for &v in chunk {
                sum = sum + v;
                sum2 = sum2 + v * v;
            }
            let count = E::from_f64(group_len as f64);
            let m = sum / count;
            let var = sum2 / count - m * m;
            // var can round slightly negative for constant inputs
            let var = if var < E::zero() { E::zero() } else { var };
            let inv = (var + eps).sqrt().recip();
            mean.push(m);
            inv_std.push(inv);

            for cc in 0..cpg {
                let ch = g * cpg + cc;
                let ga = gamma[ch];
                let be = beta[ch];
                let src = &input[base + cc * spatial..][..spatial];
                let dst = &mut out[base + cc * spatial..][..spatial];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o = ga * ((v - m) * inv) + be;
                }
            }
        }
    }
    GroupNormStats { mean, inv_std }
}

#[allow(clippy::too_many_arguments)]
pub fn group_norm_backward<E: Scalar>(
    d_out: &[E],
    input: &[E],
    (n, c, h, w): (usize, usize, usize, usize),
    groups: usize,
    gamma: &[E],
    stats: &GroupNormStats<E>,
    d_input: &mut [E],
    d_gamma: &mut [E],
    d_beta: &mut [E],
) {
    let spatial = h * w;
    let cpg = c / groups;
    let group_len = cpg * spatial;
    let count = E::from_f64(group_len as f64);

    for ni in 0..n {
        for g in 0..groups {
            let base = (ni * c + g * cpg) * spatial;
            let m = stats.mean[ni * groups + g];
            let inv = stats.inv_std[ni * groups + g];

            // Reductions over the group: sum of gamma*d_out and of
            // gamma*d_out*xhat.
            let mut sum_dxh = E::zero();
            let mut sum_dxh_xh = E::zero();
            for cc in 0..cpg {
                let ch = g * cpg + cc;
                let ga = gamma[ch];
                let x_row = &input[base + cc * spatial..][..spatial];
                let g_row = &d_out[base + cc * spatial..][..spatial];
                let mut s1 = E::zero();
                let mut s2 = E::zero();
                let mut sg = E::zero();
                let mut sb = E::zero();
                for (&x, &go) in x_row.iter().zip(g_row) {
                    let xh = (x - m) * inv;
                    let dxh = ga * go;
                    s1 = s1 + dxh;
                    s2 = s2 + dxh * xh;
                    sg = sg + go * xh;
                    sb = sb + go;
                }
                sum_dxh = sum_dxh + s1;
                sum_dxh_xh = sum_dxh_xh + s2;
                d_gamma[ch] = d_gamma[ch] + sg;
                d_beta[ch] = d_beta[ch] + sb;
            }

            let mean_dxh = sum_dxh / count;
            let mean_dxh_xh = sum_dxh_xh / count;
            for cc in 0..cpg {
                let ch = g * cpg + cc;
                let ga = gamma[ch];
                let x_row = &input[base + cc * spatial..][..spatial];
                let g_row = &d_out[base + cc * spatial..][..spatial];
                let d_row = &mut d_input[base + cc * spatial..][..spatial];
                for ((&x, &go), di) in x_row.iter().zip(g_row).zip(d_row.iter_mut()) {
                    let xh = (x - m) * inv;
                    let dxh = ga * go;
                    *di = *di + inv * (dxh - mean_dxh - xh * mean_dxh_xh);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// nearest-neighbor 2x upsampling
// ---------------------------------------------------------------------------

pub fn upsample2x_forward<E: Scalar>(
    input: &[E],
    (n, c, h, w): (usize, usize, usize, usize),
    out: &mut [E],
) {
    let (h2, w2) = (2 * h, 2 * w);
    for p in 0..n * c {
        let src = &input[p * h * w..][..h * w];
        let dst = &mut out[p * h2 * w2..][..h2 * w2];
        for y in 0..h {
            let row = &src[y * w..][..w];
            for dy in 0..2 {
                let orow = &mut dst[(2 * y + dy) * w2..][..w2];
                for x in 0..w {
                    orow[2 * x] = row[x];
                    orow[2 * x + 1] = row[x];
                }
            }
        }
    }
}

pub fn upsample2x_backward<E: Scalar>(
    d_out: &[E],
    (n, c, h, w): (usize, usize, usize, usize),
    d_input: &mut [E],
) {
    let (h2, w2) = (2 * h, 2 * w);
    for p in 0..n * c {
        let src = &d_out[p * h2 * w2..][..h2 * w2];
        let dst = &mut d_input[p * h * w..][..h * w];
        for y in 0..h {
            let drow = &mut dst[y * w..][..w];
            for dy in 0..2 {
                let grow = &src[(2 * y + dy) * w2..][..w2];
                for x in 0..w {
                    drow[x] = drow[x] + grow[2 * x] + grow[2 * x + 1];
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// matmul family (row-major)
// ---------------------------------------------------------------------------

/// c += a[m,k] * b[k,n]
pub fn matmul_acc<E: Scalar>(a: &[E], b: &[E], (m, k, n): (usize, usize, usize), c: &mut [E]) {
    matmul_block_acc(a, b, (m, k, n), c);
}

/// c += a[m,k] * b[n,k]^T
pub fn matmul_tb_acc<E: Scalar>(a: &[E], b: &[E], (m, k, n): (usize, usize, usize), c: &mut [E]) {
    for i in 0..m {
        let a_row = &a[i * k..][..k];
        let c_row = &mut c[i * n..][..n];
        for (j, cv) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..][..k];
            *cv = *cv + dot(a_row, b_row);
        }
    }
}

/// c += a[m,k]^T * b[m,n]  (contraction over the leading extent)
pub fn matmul_ta_acc<E: Scalar>(a: &[E], b: &[E], (m, k, n): (usize, usize, usize), c: &mut [E]) {
    for i in 0..m {
        let a_row = &a[i * k..][..k];
        let b_row = &b[i * n..][..n];
        for (kk, &av) in a_row.iter().enumerate() {
            let c_row = &mut c[kk * n..][..n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + av * bv;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// softmax over the last axis
// ---------------------------------------------------------------------------

/// Row-wise softmax with max subtraction. `last` is the trailing extent.
pub fn softmax_rows<E: Scalar>(input: &[E], last: usize, out: &mut [E]) {
    for (src, dst) in input.chunks_exact(last).zip(out.chunks_exact_mut(last)) {
        let mut mx = src[0];
        for &v in src {
            if v > mx {
                mx = v;
            }
        }
        let mut sum = E::zero();
        for (o, &v) in dst.iter_mut().zip(src) {
            let e = Float::exp(v - mx);
            *o = e;
            sum = sum + e;
        }
        let inv = sum.recip();
        for o in dst.iter_mut() {
            *o = *o * inv;
        }
    }
}

/// d_x = y ⊙ (d_y − ⟨d_y, y⟩) per row, where y is the stored softmax output.
pub fn softmax_rows_backward<E: Scalar>(d_out: &[E], y: &[E], last: usize, d_input: &mut [E]) {
    for ((g_row, y_row), d_row) in d_out
        .chunks_exact(last)
        .zip(y.chunks_exact(last))
        .zip(d_input.chunks_exact_mut(last))
    {
        let mut dot = E::zero();
        for (&g, &yv) in g_row.iter().zip(y_row) {
            dot = dot + g * yv;
        }
        for ((di, &g), &yv) in d_row.iter_mut().zip(g_row).zip(y_row) {
            *di = *di + yv * (g - dot);
        }
    }
}

/// Scratch buffer helper: zeroed vector of the given length.
pub fn zeros<E: Scalar>(len: usize) -> Vec<E> {
    vec![E::zero(); len]
}
