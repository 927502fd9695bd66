//! Network building blocks: pre-activation residual block with per-channel
//! residual scaling, single-head self-attention, and the encoder/decoder
//! stage blocks.
//!
//! Parameter structs are generic over their payload so the same layout
//! describes both stored tensors (`P = Tensor<E>`) and tape handles
//! (`P = VarId`) during a forward pass.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;


use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tape::{Tape, VarId};
use crate::tensor::{Shape, Tensor};

/// Initial value of the per-channel residual scaling vectors.
pub const LAYERSCALE_INIT: f64 = 0.1;
/// Group-norm epsilon.
pub const GN_EPS: f64 = 1e-5;

/// Group count for a channel width: the configured count when it divides C,
/// otherwise C itself (per-channel normalization for very narrow layers).
pub fn gn_groups(channels: usize, configured: usize) -> usize {
    if channels >= configured && channels % configured == 0 {
        configured
    } else {
        channels
    }
}

/// He fan-in initialization for conv weights feeding a ReLU.
pub fn conv_init<E: Scalar>(cout: usize, cin: usize, k: usize, rng: &mut Stream) -> Tensor<E> {
    let std = num_traits::Float::sqrt(2.0 / (cin * k * k) as f64);
    Tensor::from_fn(Shape::d4(cout, cin, k, k), |_| {
        E::from_f64(rng.normal() * std)
    })
}

/// Fan-in initialization without the ReLU gain, for convs in linear
/// positions (stem, resampling, fusion, heads). Keeping these at unit
/// variance stops feature magnitudes growing across the encoder-decoder,
/// which would otherwise start the sigmoid head half-saturated.
pub fn conv_init_linear<E: Scalar>(
    cout: usize,
    cin: usize,
    k: usize,
    rng: &mut Stream,
) -> Tensor<E> {
    let std = num_traits::Float::sqrt(1.0 / (cin * k * k) as f64);
    Tensor::from_fn(Shape::d4(cout, cin, k, k), |_| {
        E::from_f64(rng.normal() * std)
    })
}

fn proj_init<E: Scalar>(c: usize, rng: &mut Stream) -> Tensor<E> {
    let std = num_traits::Float::sqrt(1.0 / c as f64);
    Tensor::from_fn(Shape::d2(c, c), |_| E::from_f64(rng.normal() * std))
}

// ---------------------------------------------------------------------------
// pre-activation residual block
// ---------------------------------------------------------------------------

/// Two conv -> ReLU -> GroupNorm -> scale branches with residual adds:
///
/// x'  = x  + lambda1 * Norm1(ReLU(Conv1(x)))
/// x'' = x' + lambda2 * Norm2(ReLU(Conv2(x')))
#[derive(Clone, Debug)]
pub struct ResBlockParams<P> {
    pub conv1_w: P,
    pub conv1_b: P,
    pub gn1_gamma: P,
    pub gn1_beta: P,
    pub lambda1: P,
    pub conv2_w: P,
    pub conv2_b: P,
    pub gn2_gamma: P,
    pub gn2_beta: P,
    pub lambda2: P,
    pub channels: usize,
    pub groups: usize,
}

impl<E: Scalar> ResBlockParams<Tensor<E>> {
    pub fn init(channels: usize, groups: usize, rng: &mut Stream) -> Self {
        let c = channels;
        ResBlockParams {
            conv1_w: conv_init(c, c, 3, rng),
            conv1_b: Tensor::zeros(Shape::d1(c)),
            gn1_gamma: Tensor::full(Shape::d1(c), E::one()),
            gn1_beta: Tensor::zeros(Shape::d1(c)),
            lambda1: Tensor::full(Shape::d1(c), E::from_f64(LAYERSCALE_INIT)),
            conv2_w: conv_init(c, c, 3, rng),
            conv2_b: Tensor::zeros(Shape::d1(c)),
            gn2_gamma: Tensor::full(Shape::d1(c), E::one()),
            gn2_beta: Tensor::zeros(Shape::d1(c)),
            lambda2: Tensor::full(Shape::d1(c), E::from_f64(LAYERSCALE_INIT)),
            channels,
            groups: gn_groups(channels, groups),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut impl FnMut(String, &Tensor<E>)) {
        f(format!("{prefix}.conv1.w"), &self.conv1_w);
        f(format!("{prefix}.conv1.b"), &self.conv1_b);
        f(format!("{prefix}.gn1.gamma"), &self.gn1_gamma);
        f(format!("{prefix}.gn1.beta"), &self.gn1_beta);
        f(format!("{prefix}.lambda1"), &self.lambda1);
        f(format!("{prefix}.conv2.w"), &self.conv2_w);
        f(format!("{prefix}.conv2.b"), &self.conv2_b);
        f(format!("{prefix}.gn2.gamma"), &self.gn2_gamma);
        f(format!("{prefix}.gn2.beta"), &self.gn2_beta);
        f(format!("{prefix}.lambda2"), &self.lambda2);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor<E>)) {
        f(format!("{prefix}.conv1.w"), &mut self.conv1_w);
        f(format!("{prefix}.conv1.b"), &mut self.conv1_b);
        f(format!("{prefix}.gn1.gamma"), &mut self.gn1_gamma);
        f(format!("{prefix}.gn1.beta"), &mut self.gn1_beta);
        f(format!("{prefix}.lambda1"), &mut self.lambda1);
        f(format!("{prefix}.conv2.w"), &mut self.conv2_w);
        f(format!("{prefix}.conv2.b"), &mut self.conv2_b);
        f(format!("{prefix}.gn2.gamma"), &mut self.gn2_gamma);
        f(format!("{prefix}.gn2.beta"), &mut self.gn2_beta);
        f(format!("{prefix}.lambda2"), &mut self.lambda2);
    }

    pub fn register(&self, tape: &mut Tape<E>, prefix: &str) -> ResBlockParams<VarId> {
        ResBlockParams {
            conv1_w: tape.param(&format!("{prefix}.conv1.w"), self.conv1_w.clone()),
            conv1_b: tape.param(&format!("{prefix}.conv1.b"), self.conv1_b.clone()),
            gn1_gamma: tape.param(&format!("{prefix}.gn1.gamma"), self.gn1_gamma.clone()),
            gn1_beta: tape.param(&format!("{prefix}.gn1.beta"), self.gn1_beta.clone()),
            lambda1: tape.param(&format!("{prefix}.lambda1"), self.lambda1.clone()),
            conv2_w: tape.param(&format!("{prefix}.conv2.w"), self.conv2_w.clone()),
            conv2_b: tape.param(&format!("{prefix}.conv2.b"), self.conv2_b.clone()),
            gn2_gamma: tape.param(&format!("{prefix}.gn2.gamma"), self.gn2_gamma.clone()),
            gn2_beta: tape.param(&format!("{prefix}.gn2.beta"), self.gn2_beta.clone()),
            lambda2: tape.param(&format!("{prefix}.lambda2"), self.lambda2.clone()),
            channels: self.channels,
            groups: self.groups,
        }
    }
}

impl ResBlockParams<VarId> {
    /// Apply the block. Channel count of `x` must match the parameters.
    pub fn forward<E: Scalar>(&self, tape: &mut Tape<E>, x: VarId) -> Result<VarId> {
        let (_, c, _, _) = tape.value(x).shape().nchw();
        if c != self.channels {
            return Err(Error::ShapeMismatch {
                op: "preact_resblock: channel count",
                expected: Shape::d1(self.channels),
                got: Shape::d1(c),
            });
        }
        // branch 1: conv -> relu -> norm -> layerscale -> residual add
        let c1 = tape.conv2d(x, self.conv1_w, self.conv1_b, 1, 1)?;
        let r1 = tape.relu(c1);
        let n1 = tape.group_norm(r1, self.groups, self.gn1_gamma, self.gn1_beta, GN_EPS)?;
        let s1 = tape.mul_channel(n1, self.lambda1)?;
        let x1 = tape.add(x, s1)?;
        // branch 2
        let c2 = tape.conv2d(x1, self.conv2_w, self.conv2_b, 1, 1)?;
        let r2 = tape.relu(c2);
        let n2 = tape.group_norm(r2, self.groups, self.gn2_gamma, self.gn2_beta, GN_EPS)?;
        let s2 = tape.mul_channel(n2, self.lambda2)?;
        tape.add(x1, s2)
    }
}

// ---------------------------------------------------------------------------
// single-head self-attention
// ---------------------------------------------------------------------------

/// Single-head scaled dot-product attention over flattened spatial tokens,
/// with an output projection and a residual connection around the block.
#[derive(Clone, Debug)]
pub struct AttnParams<P> {
    pub wq: P,
    pub wk: P,
    pub wv: P,
    pub wo: P,
    pub d_k: usize,
}

impl<E: Scalar> AttnParams<Tensor<E>> {
    pub fn init(channels: usize, rng: &mut Stream) -> Self {
        AttnParams {
            wq: proj_init(channels, rng),
            wk: proj_init(channels, rng),
            wv: proj_init(channels, rng),
            wo: proj_init(channels, rng),
            d_k: channels,
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut impl FnMut(String, &Tensor<E>)) {
        f(format!("{prefix}.wq"), &self.wq);
        f(format!("{prefix}.wk"), &self.wk);
        f(format!("{prefix}.wv"), &self.wv);
        f(format!("{prefix}.wo"), &self.wo);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor<E>)) {
        f(format!("{prefix}.wq"), &mut self.wq);
        f(format!("{prefix}.wk"), &mut self.wk);
        f(format!("{prefix}.wv"), &mut self.wv);
        f(format!("{prefix}.wo"), &mut self.wo);
    }

    pub fn register(&self, tape: &mut Tape<E>, prefix: &str) -> AttnParams<VarId> {
        AttnParams {
            wq: tape.param(&format!("{prefix}.wq"), self.wq.clone()),
            wk: tape.param(&format!("{prefix}.wk"), self.wk.clone()),
            wv: tape.param(&format!("{prefix}.wv"), self.wv.clone()),
            wo: tape.param(&format!("{prefix}.wo"), self.wo.clone()),
            d_k: self.d_k,
        }
    }
}

impl AttnParams<VarId> {
    pub fn forward<E: Scalar>(&self, tape: &mut Tape<E>, x: VarId) -> Result<VarId> {
        let (_, c, h, w) = tape.value(x).shape().nchw();
        if c != self.d_k {
            return Err(Error::ShapeMismatch {
                op: "self_attention: channel count",
                expected: Shape::d1(self.d_k),
                got: Shape::d1(c),
            });
        }
        let tokens = tape.nchw_to_tokens(x);
        let q = tape.matmul(tokens, self.wq)?;
        let k = tape.matmul(tokens, self.wk)?;
        let v = tape.matmul(tokens, self.wv)?;
        let scores = tape.matmul_tb(q, k)?;
        let scaled = tape.scale(scores, E::from_f64(1.0 / num_traits::Float::sqrt(self.d_k as f64)));
        let attn = tape.softmax_last(scaled);
        let mixed = tape.matmul(attn, v)?;
        let proj = tape.matmul(mixed, self.wo)?;
        let back = tape.tokens_to_nchw(proj, h, w)?;
        tape.add(x, back)
    }
}

// ---------------------------------------------------------------------------
// encoder / decoder stage blocks
// ---------------------------------------------------------------------------

/// Encoder stage: residual blocks at full resolution (each output kept as a
/// skip), then a stride-2 conv doubling the channel count.
#[derive(Clone, Debug)]
pub struct DownBlockParams<P> {
    pub res: Vec<ResBlockParams<P>>,
    pub down_w: P,
    pub down_b: P,
    pub channels: usize,
}

impl<E: Scalar> DownBlockParams<Tensor<E>> {
    pub fn init(channels: usize, n_res: usize, groups: usize, rng: &mut Stream) -> Self {
        DownBlockParams {
            res: (0..n_res)
                .map(|_| ResBlockParams::init(channels, groups, rng))
                .collect(),
            down_w: conv_init_linear(2 * channels, channels, 3, rng),
            down_b: Tensor::zeros(Shape::d1(2 * channels)),
            channels,
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut impl FnMut(String, &Tensor<E>)) {
        for (i, r) in self.res.iter().enumerate() {
            r.visit(&format!("{prefix}.res{i}"), f);
        }
        f(format!("{prefix}.down.w"), &self.down_w);
        f(format!("{prefix}.down.b"), &self.down_b);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor<E>)) {
        for (i, r) in self.res.iter_mut().enumerate() {
            r.visit_mut(&format!("{prefix}.res{i}"), f);
        }
        f(format!("{prefix}.down.w"), &mut self.down_w);
        f(format!("{prefix}.down.b"), &mut self.down_b);
    }

    pub fn register(&self, tape: &mut Tape<E>, prefix: &str) -> DownBlockParams<VarId> {
        DownBlockParams {
            res: self
                .res
                .iter()
                .enumerate()
                .map(|(i, r)| r.register(tape, &format!("{prefix}.res{i}")))
                .collect(),
            down_w: tape.param(&format!("{prefix}.down.w"), self.down_w.clone()),
            down_b: tape.param(&format!("{prefix}.down.b"), self.down_b.clone()),
            channels: self.channels,
        }
    }
}

impl DownBlockParams<VarId> {
    /// Returns (skips, downsampled output).
    pub fn forward<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        x: VarId,
    ) -> Result<(Vec<VarId>, VarId)> {
        let (_, _, h, w) = tape.value(x).shape().nchw();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(crate::invalid_arg!(
                "down_block: spatial extents {h}x{w} must be even"
            ));
        }
        let mut skips = Vec::with_capacity(self.res.len());
        let mut cur = x;
        for r in &self.res {
            cur = r.forward(tape, cur)?;
            skips.push(cur);
        }
        let down = tape.conv2d(cur, self.down_w, self.down_b, 2, 1)?;
        Ok((skips, down))
    }
}

/// Decoder stage: 2x upsample + conv halving channels, concatenation with
/// the stage's skips, a 1x1 fuse conv, then one more residual block than the
/// matching encoder stage.
#[derive(Clone, Debug)]
pub struct UpBlockParams<P> {
    pub up_w: P,
    pub up_b: P,
    pub fuse_w: P,
    pub fuse_b: P,
    pub res: Vec<ResBlockParams<P>>,
    pub channels: usize,
    pub n_skips: usize,
}

impl<E: Scalar> UpBlockParams<Tensor<E>> {
    /// `channels` is the output width C; input has 2C channels.
    pub fn init(channels: usize, n_skips: usize, groups: usize, rng: &mut Stream) -> Self {
        let c = channels;
        UpBlockParams {
            up_w: conv_init_linear(c, 2 * c, 3, rng),
            up_b: Tensor::zeros(Shape::d1(c)),
            fuse_w: conv_init_linear(c, (n_skips + 1) * c, 1, rng),
            fuse_b: Tensor::zeros(Shape::d1(c)),
            res: (0..n_skips + 1)
                .map(|_| ResBlockParams::init(c, groups, rng))
                .collect(),
            channels,
            n_skips,
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut impl FnMut(String, &Tensor<E>)) {
        f(format!("{prefix}.up.w"), &self.up_w);
        f(format!("{prefix}.up.b"), &self.up_b);
        f(format!("{prefix}.fuse.w"), &self.fuse_w);
        f(format!("{prefix}.fuse.b"), &self.fuse_b);
        for (i, r) in self.res.iter().enumerate() {
            r.visit(&format!("{prefix}.res{i}"), f);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor<E>)) {
        f(format!("{prefix}.up.w"), &mut self.up_w);
        f(format!("{prefix}.up.b"), &mut self.up_b);
        f(format!("{prefix}.fuse.w"), &mut self.fuse_w);
        f(format!("{prefix}.fuse.b"), &mut self.fuse_b);
        for (i, r) in self.res.iter_mut().enumerate() {
            r.visit_mut(&format!("{prefix}.res{i}"), f);
        }
    }

    pub fn register(&self, tape: &mut Tape<E>, prefix: &str) -> UpBlockParams<VarId> {
        UpBlockParams {
            up_w: tape.param(&format!("{prefix}.up.w"), self.up_w.clone()),
            up_b: tape.param(&format!("{prefix}.up.b"), self.up_b.clone()),
            fuse_w: tape.param(&format!("{prefix}.fuse.w"), self.fuse_w.clone()),
            fuse_b: tape.param(&format!("{prefix}.fuse.b"), self.fuse_b.clone()),
            res: self
                .res
                .iter()
                .enumerate()
                .map(|(i, r)| r.register(tape, &format!("{prefix}.res{i}")))
                .collect(),
            channels: self.channels,
            n_skips: self.n_skips,
        }
    }
}

impl UpBlockParams<VarId> {
    pub fn forward<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        x: VarId,
        skips: &[VarId],
    ) -> Result<VarId> {
        if skips.len() != self.n_skips {
            return Err(crate::invalid_arg!(
                "up_block: expected {} skips, got {}",
                self.n_skips,
                skips.len()
            ));
        }
        let up = tape.upsample2x(x);
        let reduced = tape.conv2d(up, self.up_w, self.up_b, 1, 1)?;
        let want = tape.value(reduced).shape();
        for &s in skips {
            if tape.value(s).shape() != want {
                return Err(Error::ShapeMismatch {
                    op: "up_block: skip shape",
                    expected: want,
                    got: tape.value(s).shape(),
                });
            }
        }
        let mut cat = Vec::with_capacity(1 + skips.len());
        cat.push(reduced);
        cat.extend_from_slice(skips);
        let merged = tape.concat_channels(&cat)?;
        let mut cur = tape.conv2d(merged, self.fuse_w, self.fuse_b, 1, 0)?;
        for r in &self.res {
            cur = r.forward(tape, cur)?;
        }
        Ok(cur)
    }
}
