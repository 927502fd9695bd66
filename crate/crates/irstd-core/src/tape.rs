//! Reverse-mode differentiation over a recorded operation tape.
//!
//! A [`Tape`] owns every tensor produced during one forward pass. Forward
//! methods validate shapes, run the kernel, and record the operation; the
//! backward pass replays the record in reverse, accumulating adjoints via
//! the chain rule. Tapes are single-use: they are rebuilt for every forward
//! pass and reject a second backward call.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::kernels::{self, GroupNormStats};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Handle to a tensor stored on a tape.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct VarId(usize);

struct Node<E: Scalar> {
    value: Tensor<E>,
    requires_grad: bool,
    /// Transitive: true when any ancestor requires a gradient.
    needs_grad: bool,
    name: Option<String>,
}

enum Op<E: Scalar> {
    Conv2d {
        input: VarId,
        weight: VarId,
        bias: VarId,
        out: VarId,
        stride: usize,
        padding: usize,
    },
    GroupNorm {
        input: VarId,
        gamma: VarId,
        beta: VarId,
        out: VarId,
        groups: usize,
        stats: GroupNormStats<E>,
    },
    Relu {
        input: VarId,
        out: VarId,
    },
    Sigmoid {
        input: VarId,
        out: VarId,
    },
    Upsample2x {
        input: VarId,
        out: VarId,
    },
    /// out = a @ b, optionally broadcasting a rank-2 `b` over a's batch.
    MatMul {
        a: VarId,
        b: VarId,
        out: VarId,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        broadcast_b: bool,
    },
    /// out = a @ b^T with both operands batched.
    MatMulTB {
        a: VarId,
        b: VarId,
        out: VarId,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    SoftmaxLast {
        input: VarId,
        out: VarId,
        last: usize,
    },
    Add {
        a: VarId,
        b: VarId,
        out: VarId,
    },
    Sub {
        a: VarId,
        b: VarId,
        out: VarId,
    },
    Mul {
        a: VarId,
        b: VarId,
        out: VarId,
    },
    Div {
        a: VarId,
        b: VarId,
        out: VarId,
    },
    Scale {
        input: VarId,
        out: VarId,
        factor: E,
    },
    AddScalar {
        input: VarId,
        out: VarId,
    },
    /// Per-channel scaling of an NCHW tensor by a length-C vector.
    MulChannel {
        input: VarId,
        lam: VarId,
        out: VarId,
    },
    ConcatChannels {
        inputs: Vec<VarId>,
        out: VarId,
    },
    /// [N,C,H,W] -> [N, H*W, C]
    NchwToTokens {
        input: VarId,
        out: VarId,
    },
    /// [N, H*W, C] -> [N,C,H,W]
    TokensToNchw {
        input: VarId,
        out: VarId,
        h: usize,
        w: usize,
    },
    SumAll {
        input: VarId,
        out: VarId,
    },
    MeanAll {
        input: VarId,
        out: VarId,
    },
    /// [N, ...] -> [N], summing everything but the leading axis.
    SumPerSample {
        input: VarId,
        out: VarId,
    },
    Abs {
        input: VarId,
        out: VarId,
    },
}

/// Single-use reverse-mode tape.
pub struct Tape<E: Scalar> {
    nodes: Vec<Node<E>>,
    ops: Vec<Op<E>>,
    grads: Vec<Option<Tensor<E>>>,
    backward_done: bool,
    check_finite: bool,
}

impl<E: Scalar> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Tape<E> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            check_finite: false,
        }
    }

    /// Verify after every operation that outputs stay finite. Used in tests;
    /// too expensive for training loops.
    pub fn with_finite_checks(mut self) -> Self {
        self.check_finite = true;
        self
    }

    fn push(&mut self, value: Tensor<E>, requires_grad: bool, name: Option<String>) -> VarId {
        let needs = requires_grad;
        self.nodes.push(Node {
            value,
            requires_grad,
            needs_grad: needs,
            name,
        });
        self.grads.push(None);
        VarId(self.nodes.len() - 1)
    }

    /// Non-differentiable input (images, masks, constants).
    pub fn constant(&mut self, value: Tensor<E>) -> VarId {
        self.push(value, false, None)
    }

    /// Differentiable leaf without a name (used by the gradient checker).
    pub fn leaf(&mut self, value: Tensor<E>) -> VarId {
        self.push(value, true, None)
    }

    /// Named differentiable leaf (model parameters).
    pub fn param(&mut self, name: &str, value: Tensor<E>) -> VarId {
        self.push(value, true, Some(String::from(name)))
    }

    pub fn value(&self, id: VarId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn out_node(&mut self, shape: Shape, data: Vec<E>, parents: &[VarId]) -> VarId {
        let needs = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        let value = Tensor::from_vec(shape, data).expect("kernel produced wrong length");
        if self.check_finite {
            assert!(value.is_finite(), "non-finite forward output");
        }
        self.nodes.push(Node {
            value,
            requires_grad: false,
            needs_grad: needs,
            name: None,
        });
        self.grads.push(None);
        VarId(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: VarId, b: VarId) -> Result<Shape> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                expected: sa,
                got: sb,
            });
        }
        Ok(sa)
    }

    // -- forward operations -------------------------------------------------

    /// 2-D convolution, NCHW x [Cout,Cin,k,k] + [Cout].
    pub fn conv2d(
        &mut self,
        input: VarId,
        weight: VarId,
        bias: VarId,
        stride: usize,
        padding: usize,
    ) -> Result<VarId> {
        let ishape = self.value(input).shape();
        let wshape = self.value(weight).shape();
        let (n, cin, h, w) = ishape.nchw();
        let (cout, wcin, k, k2) = wshape.nchw();
        if k != k2 || !(1..=3).contains(&k) {
            return Err(crate::invalid_arg!(
                "conv2d: kernel must be square with k in 1..=3, got {wshape}"
            ));
        }
        if wcin != cin {
            return Err(Error::ShapeMismatch {
                op: "conv2d: input channels vs weight channels",
                expected: ishape,
                got: wshape,
            });
        }
        if self.value(bias).shape() != Shape::d1(cout) {
            return Err(Error::ShapeMismatch {
                op: "conv2d: bias",
                expected: Shape::d1(cout),
                got: self.value(bias).shape(),
            });
        }
        if stride == 0 {
            return Err(crate::invalid_arg!("conv2d: stride must be positive"));
        }
        if h + 2 * padding < k || w + 2 * padding < k {
            return Err(crate::invalid_arg!(
                "conv2d: spatial extents {h}x{w} too small for k={k}, padding={padding}"
            ));
        }
        let ho = kernels::conv_out_extent(h, k, stride, padding);
        let wo = kernels::conv_out_extent(w, k, stride, padding);
        let mut out = kernels::zeros(n * cout * ho * wo);
        kernels::conv2d_forward(
            self.value(input).data(),
            (n, cin, h, w),
            self.value(weight).data(),
            (cout, k),
            self.value(bias).data(),
            stride,
            padding,
            &mut out,
        );
        let id = self.out_node(Shape::d4(n, cout, ho, wo), out, &[input, weight, bias]);
        self.ops.push(Op::Conv2d {
            input,
            weight,
            bias,
            out: id,
            stride,
            padding,
        });
        Ok(id)
    }

    /// Group normalization with per-channel affine parameters.
    pub fn group_norm(
        &mut self,
        input: VarId,
        groups: usize,
        gamma: VarId,
        beta: VarId,
        eps: f64,
    ) -> Result<VarId> {
        let shape = self.value(input).shape();
        let (n, c, h, w) = shape.nchw();
        if groups == 0 || c % groups != 0 {
            return Err(crate::invalid_arg!(
                "group_norm: channels {c} not divisible by groups {groups}"
            ));
        }
        if self.value(gamma).shape() != Shape::d1(c) || self.value(beta).shape() != Shape::d1(c) {
            return Err(Error::ShapeMismatch {
                op: "group_norm: affine parameters",
                expected: Shape::d1(c),
                got: self.value(gamma).shape(),
            });
        }
        if eps <= 0.0 {
            return Err(crate::invalid_arg!("group_norm: eps must be positive"));
        }
        let mut out = kernels::zeros(shape.numel());
        let stats = kernels::group_norm_forward(
            self.value(input).data(),
            (n, c, h, w),
            groups,
            self.value(gamma).data(),
            self.value(beta).data(),
            E::from_f64(eps),
            &mut out,
        );
        let id = self.out_node(shape, out, &[input, gamma, beta]);
        self.ops.push(Op::GroupNorm {
            input,
            gamma,
            beta,
            out: id,
            groups,
            stats,
        });
        Ok(id)
    }

    pub fn relu(&mut self, input: VarId) -> VarId {
        let shape = self.value(input).shape();
        let data = self
            .value(input)
            .data()
            .iter()
            .map(|&v| if v > E::zero() { v } else { E::zero() })
            .collect();
        let id = self.out_node(shape, data, &[input]);
        self.ops.push(Op::Relu { input, out: id });
        id
    }

    pub fn sigmoid(&mut self, input: VarId) -> VarId {
        let shape = self.value(input).shape();
        let one = E::one();
        let data = self
            .value(input)
            .data()
            .iter()
            .map(|&v| one / (one + Float::exp(-v)))
            .collect();
        let id = self.out_node(shape, data, &[input]);
        self.ops.push(Op::Sigmoid { input, out: id });
        id
    }

    /// Nearest-neighbor 2x upsampling.
    pub fn upsample2x(&mut self, input: VarId) -> VarId {
        let (n, c, h, w) = self.value(input).shape().nchw();
        let mut out = kernels::zeros(n * c * 4 * h * w);
        kernels::upsample2x_forward(self.value(input).data(), (n, c, h, w), &mut out);
        let id = self.out_node(Shape::d4(n, c, 2 * h, 2 * w), out, &[input]);
        self.ops.push(Op::Upsample2x { input, out: id });
        id
    }

    /// Matrix product. Accepts [m,k]x[k,n], [B,m,k]x[k,n] (b broadcast over
    /// the batch) and [B,m,k]x[B,k,n].
    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        let (batch, m, k) = match sa.rank() {
            2 => (1, sa.dim(0), sa.dim(1)),
            3 => (sa.dim(0), sa.dim(1), sa.dim(2)),
            _ => return Err(crate::invalid_arg!("matmul: lhs must be rank 2 or 3")),
        };
        let (broadcast_b, kb, n) = match sb.rank() {
            2 => (true, sb.dim(0), sb.dim(1)),
            3 => {
                if sb.dim(0) != batch {
                    return Err(Error::ShapeMismatch {
                        op: "matmul: batch extents",
                        expected: sa,
                        got: sb,
                    });
                }
                (false, sb.dim(1), sb.dim(2))
            }
            _ => return Err(crate::invalid_arg!("matmul: rhs must be rank 2 or 3")),
        };
        if kb != k {
            return Err(Error::ShapeMismatch {
                op: "matmul: inner extents",
                expected: sa,
                got: sb,
            });
        }
        let mut out = kernels::zeros(batch * m * n);
        for bi in 0..batch {
            let a_off = bi * m * k;
            let b_off = if broadcast_b { 0 } else { bi * k * n };
            kernels::matmul_acc(
                &self.value(a).data()[a_off..a_off + m * k],
                &self.value(b).data()[b_off..b_off + k * n],
                (m, k, n),
                &mut out[bi * m * n..][..m * n],
            );
        }
        let shape = if sa.rank() == 2 {
            Shape::d2(m, n)
        } else {
            Shape::d3(batch, m, n)
        };
        let id = self.out_node(shape, out, &[a, b]);
        self.ops.push(Op::MatMul {
            a,
            b,
            out: id,
            batch,
            m,
            k,
            n,
            broadcast_b,
        });
        Ok(id)
    }

    /// Batched a @ b^T for [B,m,k] x [B,n,k].
    pub fn matmul_tb(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa.rank() != 3 || sb.rank() != 3 || sa.dim(0) != sb.dim(0) || sa.dim(2) != sb.dim(2) {
            return Err(Error::ShapeMismatch {
                op: "matmul_tb",
                expected: sa,
                got: sb,
            });
        }
        let (batch, m, k) = (sa.dim(0), sa.dim(1), sa.dim(2));
        let n = sb.dim(1);
        let mut out = kernels::zeros(batch * m * n);
        for bi in 0..batch {
            kernels::matmul_tb_acc(
                &self.value(a).data()[bi * m * k..][..m * k],
                &self.value(b).data()[bi * n * k..][..n * k],
                (m, k, n),
                &mut out[bi * m * n..][..m * n],
            );
        }
        let id = self.out_node(Shape::d3(batch, m, n), out, &[a, b]);
        self.ops.push(Op::MatMulTB {
            a,
            b,
            out: id,
            batch,
            m,
            k,
            n,
        });
        Ok(id)
    }

    /// Numerically stable softmax over the trailing axis.
    pub fn softmax_last(&mut self, input: VarId) -> VarId {
        let shape = self.value(input).shape();
        let last = shape.dim(shape.rank() - 1);
        let mut out = kernels::zeros(shape.numel());
        kernels::softmax_rows(self.value(input).data(), last, &mut out);
        let id = self.out_node(shape, out, &[input]);
        self.ops.push(Op::SoftmaxLast {
            input,
            out: id,
            last,
        });
        id
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let shape = self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let id = self.out_node(shape, data, &[a, b]);
        self.ops.push(Op::Add { a, b, out: id });
        Ok(id)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let shape = self.same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let id = self.out_node(shape, data, &[a, b]);
        self.ops.push(Op::Sub { a, b, out: id });
        Ok(id)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let shape = self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let id = self.out_node(shape, data, &[a, b]);
        self.ops.push(Op::Mul { a, b, out: id });
        Ok(id)
    }

    pub fn div(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let shape = self.same_shape("div", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x / y)
            .collect();
        let id = self.out_node(shape, data, &[a, b]);
        self.ops.push(Op::Div { a, b, out: id });
        Ok(id)
    }

    pub fn scale(&mut self, input: VarId, factor: E) -> VarId {
        let shape = self.value(input).shape();
        let data = self.value(input).data().iter().map(|&v| v * factor).collect();
        let id = self.out_node(shape, data, &[input]);
        self.ops.push(Op::Scale {
            input,
            out: id,
            factor,
        });
        id
    }

    pub fn add_scalar(&mut self, input: VarId, c: E) -> VarId {
        let shape = self.value(input).shape();
        let data = self.value(input).data().iter().map(|&v| v + c).collect();
        let id = self.out_node(shape, data, &[input]);
        self.ops.push(Op::AddScalar { input, out: id });
        id
    }

    /// out[n,c,h,w] = input[n,c,h,w] * lam[c]
    pub fn mul_channel(&mut self, input: VarId, lam: VarId) -> Result<VarId> {
        let shape = self.value(input).shape();
        let (n, c, h, w) = shape.nchw();
        if self.value(lam).shape() != Shape::d1(c) {
            return Err(Error::ShapeMismatch {
                op: "mul_channel: per-channel vector",
                expected: Shape::d1(c),
                got: self.value(lam).shape(),
            });
        }
        let spatial = h * w;
        let mut data = Vec::with_capacity(shape.numel());
        for ni in 0..n {
            for ci in 0..c {
                let lv = self.value(lam).data()[ci];
                let src = &self.value(input).data()[(ni * c + ci) * spatial..][..spatial];
                data.extend(src.iter().map(|&v| v * lv));
            }
        }
        let id = self.out_node(shape, data, &[input, lam]);
        self.ops.push(Op::MulChannel {
            input,
            lam,
            out: id,
        });
        Ok(id)
    }

    /// Concatenate NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[VarId]) -> Result<VarId> {
        if inputs.is_empty() {
            return Err(crate::invalid_arg!("concat_channels: no inputs"));
        }
        let (n, _, h, w) = self.value(inputs[0]).shape().nchw();
        let mut c_total = 0;
        for &v in inputs {
            let (vn, vc, vh, vw) = self.value(v).shape().nchw();
            if vn != n || vh != h || vw != w {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    expected: self.value(inputs[0]).shape(),
                    got: self.value(v).shape(),
                });
            }
            c_total += vc;
        }
        let spatial = h * w;
        let mut data = Vec::with_capacity(n * c_total * spatial);
        for ni in 0..n {
            for &v in inputs {
                let vc = self.value(v).shape().dim(1);
                let src = &self.value(v).data()[ni * vc * spatial..][..vc * spatial];
                data.extend_from_slice(src);
            }
        }
        let id = self.out_node(Shape::d4(n, c_total, h, w), data, inputs);
        self.ops.push(Op::ConcatChannels {
            inputs: inputs.to_vec(),
            out: id,
        });
        Ok(id)
    }

    /// [N,C,H,W] -> [N, H*W, C] token layout for attention.
    pub fn nchw_to_tokens(&mut self, input: VarId) -> VarId {
        let (n, c, h, w) = self.value(input).shape().nchw();
        let t = h * w;
        let mut data = kernels::zeros(n * t * c);
        {
            let src = self.value(input).data();
            for ni in 0..n {
                for ci in 0..c {
                    for ti in 0..t {
                        data[(ni * t + ti) * c + ci] = src[(ni * c + ci) * t + ti];
                    }
                }
            }
        }
        let id = self.out_node(Shape::d3(n, t, c), data, &[input]);
        self.ops.push(Op::NchwToTokens { input, out: id });
        id
    }

    /// [N, H*W, C] -> [N,C,H,W]
    pub fn tokens_to_nchw(&mut self, input: VarId, h: usize, w: usize) -> Result<VarId> {
        let shape = self.value(input).shape();
        if shape.rank() != 3 || shape.dim(1) != h * w {
            return Err(crate::invalid_arg!(
                "tokens_to_nchw: token count {} does not match {h}x{w}",
                shape.dim(1)
            ));
        }
        let (n, t, c) = (shape.dim(0), shape.dim(1), shape.dim(2));
        let mut data = kernels::zeros(n * c * t);
        {
            let src = self.value(input).data();
            for ni in 0..n {
                for ti in 0..t {
                    for ci in 0..c {
                        data[(ni * c + ci) * t + ti] = src[(ni * t + ti) * c + ci];
                    }
                }
            }
        }
        let id = self.out_node(Shape::d4(n, c, h, w), data, &[input]);
        self.ops.push(Op::TokensToNchw {
            input,
            out: id,
            h,
            w,
        });
        Ok(id)
    }

    pub fn sum_all(&mut self, input: VarId) -> VarId {
        let mut acc = E::zero();
        for &v in self.value(input).data() {
            acc = acc + v;
        }
        let id = self.out_node(Shape::d1(1), vec![acc], &[input]);
        self.ops.push(Op::SumAll { input, out: id });
        id
    }

    pub fn mean_all(&mut self, input: VarId) -> VarId {
        let n = self.value(input).numel();
        let mut acc = E::zero();
        for &v in self.value(input).data() {
            acc = acc + v;
        }
        let id = self.out_node(
            Shape::d1(1),
            vec![acc / E::from_f64(n as f64)],
            &[input],
        );
        self.ops.push(Op::MeanAll { input, out: id });
        id
    }

    /// Reduce [N, ...] to [N] by summing the trailing axes.
    pub fn sum_per_sample(&mut self, input: VarId) -> VarId {
        let shape = self.value(input).shape();
        let n = shape.dim(0);
        let per = shape.numel() / n;
        let mut data = Vec::with_capacity(n);
        for chunk in self.value(input).data().chunks_exact(per) {
            let mut acc = E::zero();
            for &v in chunk {
                acc = acc + v;
            }
            data.push(acc);
        }
        let id = self.out_node(Shape::d1(n), data, &[input]);
        self.ops.push(Op::SumPerSample { input, out: id });
        id
    }

    pub fn abs(&mut self, input: VarId) -> VarId {
        let shape = self.value(input).shape();
        let data = self.value(input).data().iter().map(|&v| v.abs()).collect();
        let id = self.out_node(shape, data, &[input]);
        self.ops.push(Op::Abs { input, out: id });
        id
    }

    // -- backward ------------------------------------------------------------

    /// Accumulate adjoints for every recorded operation, in reverse order.
    ///
    /// `loss` must be a scalar (one-element) tensor produced on this tape.
    /// A second call without a fresh forward pass is rejected.
    pub fn backward(&mut self, loss: VarId) -> Result<()> {
        if self.backward_done {
            return Err(crate::invalid_arg!(
                "backward: tape already consumed; rebuild the forward pass"
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(crate::invalid_arg!(
                "backward: loss must be scalar, got shape {}",
                self.value(loss).shape()
            ));
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), E::one()));

        // The tape is consumed by backward; detaching the op list sidesteps
        // borrow conflicts with gradient accumulation.
        let ops = core::mem::take(&mut self.ops);
        for op in ops.iter().rev() {
            self.backward_op(op);
        }

        // Contract: every requires_grad leaf ends up with a gradient, zeros
        // if the loss does not reach it.
        for i in 0..self.nodes.len() {
            if self.nodes[i].requires_grad && self.grads[i].is_none() {
                self.grads[i] = Some(Tensor::zeros(self.nodes[i].value.shape()));
            }
        }
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `id`.
    pub fn grad(&self, id: VarId) -> Option<&Tensor<E>> {
        self.grads[id.0].as_ref()
    }

    /// Gradients of all named parameters, in registration order.
    pub fn named_grads(&self) -> Vec<(String, Tensor<E>)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| {
                n.name.as_ref().map(|name| {
                    let g = self.grads[i]
                        .clone()
                        .unwrap_or_else(|| Tensor::zeros(n.value.shape()));
                    (name.clone(), g)
                })
            })
            .collect()
    }

    /// Detach the accumulated adjoint of an op output. Reverse-order replay
    /// guarantees all consumers have already added their contributions, and
    /// each producer is visited once, so moving it out is safe. Leaves are
    /// never producers, so their gradients survive backward.
    fn take_out_grad(&mut self, out: VarId) -> Option<Tensor<E>> {
        self.grads[out.0].take()
    }

    fn needs(&self, id: VarId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn accumulate(&mut self, id: VarId, delta: &[E]) {
        let shape = self.nodes[id.0].value.shape();
        match &mut self.grads[id.0] {
            Some(g) => {
                for (gv, &d) in g.data_mut().iter_mut().zip(delta) {
                    *gv = *gv + d;
                }
            }
            None => {
                self.grads[id.0] =
                    Some(Tensor::from_vec(shape, delta.to_vec()).expect("gradient shape"));
            }
        }
    }

    fn backward_op(&mut self, op: &Op<E>) {
        match op {
            Op::Conv2d {
                input,
                weight,
                bias,
                out,
                stride,
                padding,
            } => {
                if let Some(d_out) = self.take_out_grad(*out) {
                    let (n, cin, h, w) = self.value(*input).shape().nchw();
                    let (cout, _, k, _) = self.value(*weight).shape().nchw();
                    if self.needs(*input) {
                        let mut d_in = kernels::zeros(n * cin * h * w);
                        kernels::conv2d_backward_input(
                            d_out.data(),
                            (n, cin, h, w),
                            self.value(*weight).data(),
                            (cout, k),
                            *stride,
                            *padding,
                            &mut d_in,
                        );
                        self.accumulate(*input, &d_in);
                    }
                    if self.needs(*weight) || self.needs(*bias) {
                        let mut d_w = kernels::zeros(cout * cin * k * k);
                        let mut d_b = kernels::zeros(cout);
                        kernels::conv2d_backward_params(
                            d_out.data(),
                            self.value(*input).data(),
                            (n, cin, h, w),
                            (cout, k),
                            *stride,
                            *padding,
                            &mut d_w,
                            &mut d_b,
                        );
                        self.accumulate(*weight, &d_w);
                        self.accumulate(*bias, &d_b);
                    }
                }
            }
            Op::GroupNorm {
                input,
                gamma,
                beta,
                out,
                groups,
                stats,
            } => {
                if let Some(d_out) = self.take_out_grad(*out) {
                    let (n, c, h, w) = self.value(*input).shape().nchw();
                    let mut d_in = kernels::zeros(n * c * h * w);
                    let mut d_gamma = kernels::zeros(c);
                    let mut d_beta = kernels::zeros(c);
                    kernels::group_norm_backward(
                        d_out.data(),
                        self.value(*input).data(),
                        (n, c, h, w),
                        *groups,
                        self.value(*gamma).data(),
                        stats,
                        &mut d_in,
                        &mut d_gamma,
                        &mut d_beta,
                    );
                    if self.needs(*input) {
                        self.accumulate(*input, &d_in);
                    }
                    self.accumulate(*gamma, &d_gamma);
                    self.accumulate(*beta, &d_beta);
                }
            }
            Op::Relu { input, out } => {
                if let Some(d_out) = self.take_out_grad(*out) {
                    if self.needs(*input) {
                        let d: Vec<E> = self
                            .value(*input)
                            .data()
                            .iter()
                            .zip(d_out.data())
                            .map(|(&x, &g)| if x > E::zero() { g } else { E::zero() })
                            .collect();
                        self.accumulate(*input, &d);
                    }
                }
            }
            Op::Sigmoid { input, out } => {
                if let Some(d_out) = self.take_out_grad(*out) {
                    if self.needs(*input) {
                        let one = E::one();
                        let d: Vec<E> = self
                            .value(*out)
                            .data()
                            .iter()
                            .zip(d_out.data())
                            .map(|(&y, &g)| g * y * (one - y))
                            .collect();
                        self.accumulate(*input, &d);
                    }
                }
            }
            Op::Upsample2x { input, out } => {
                if let Some(d_out) = self.take_out_grad(*out) {
                    if self.needs(*input) {
                        let (n, c, h, w) = self.value(*input).shape().nchw();
                        let mut d_in = kernels::zeros(n * c * h * w);
                        kernels::upsample2x_backward(d_out.data(), (n, c, h, w), &mut d_in);
                        self.accumulate(*input, &d_in);
                    }
                }
            }
            Op::MatMul {
                a,
                b,
                out,
                batch,
                m,
                k,
                n,
                broadcast_b,
            } => {
                if let Some(d_out) = self.take_out_grad(*out) {
                    let (batch, m, k, n) = (*batch, *m, *k, *n);
                    if self.needs(*a) {
                        let mut d_a = kernels::zeros(batch * m * k);
                        for bi in 0..batch {
                            let b_off = if *broadcast_b { 0 } else { bi * k * n };
                            kernels::matmul_tb_acc(
                                &d_out.data()[bi * m * n..][..m * n],
                                &self.value(*b).data()[b_off..b_off + k * n],
                                (m, n, k),
                                &mut d_a[bi * m * k..][..m * k],
                            );
                        }
                        self.accumulate(*a, &d_a);
                    }
                    if self.needs(*b) {
                        let b_len = if *broadcast_b { k * n } else { batch * k * n };
                        let mut d_b = kernels::zeros(b_len);
                        for bi in 0..batch {
                            let b_off = if *broadcast_b { 0 } else { bi * k * n };
                            kernels::matmul_ta_acc(
                                &self.value(*a).data()[bi * m * k..][..m * k],
                                &d_out.data()[bi * m * n..][..m * n],
                                (m, k, n),
                                &mut d_b[b_off..b_off + k * n],
                            );
                        }
                        self.accumulate(*b, &d_b);
                    }
                }
            }
            Op::MatMulTB {
                a,
                b,
                out,
                batch,
                m,
                k,
                n,
            } => {
                if let Some(d_out) = self.take_out_grad(*out) {
                    let (batch, m, k, n) = (*batch, *m, *k, *n);
                    if self.needs(*a) {
                        // d_a = d_out @ b
                        let mut d_a = kernels::zeros(batch * m * k);
                        for bi in 0..batch {
                            kernels::matmul_acc(
                                &d_out.data()[bi * m * n..][..m * n],
                                &self.value(*b).data()[bi * n * k..][..n * k],
                                (m, n, k),
                                &mut d_a[bi * m * k..][..m * k],
                            );
                        }
                        self.accumulate(*a, &d_a);
                    }
                    if self.needs(*b) {
                        // d_b = d_out^T @ a
                        let mut d_b = kernels::zeros(batch * n * k);
                        for bi in 0..batch {
                            kernels::matmul_ta_acc(
                                &d_out.data()[bi * m * n..][..m * n],
                                &self.value(*a).data()[bi * m * k..][..m * k],
                                (m, n, k),
                                &mut d_b[bi * n * k..][..n * k],
                            );
                        }
                        self.accumulate(*b, &d_b);
                    }
                }
            }
            Op::SoftmaxLast { input, out, last } => {
                if let Some(d_out) = self.take_out_grad(*out) {
                    if self.needs(*input) {
                        let mut d_in = kernels::zeros(d_out.numel());
                        kernels::softmax_rows_backward(
                            d_out.data(),
                            self.value(*out).data(),
                            *last,
                            &mut d_in,
                        );
                        self.accumulate(*input, &d_in);
                    }
                }
            }
            Op::Add { a, b, out } => {
                if let Some(d_out) = self.take_out_grad(*out) {
                    if self.needs(*a) {
                        self.accumulate(*a, d_out.data());
                    }
                    if self.needs(*b) {
                        self.accumulate(*b, d_out.data());
                    }
                }
            }
            Op::Sub { a, b, out } => {
                if let Some(d_out) = self.take_out_grad(*out) {
                    if self.needs(*a) {
                        self.accumulate(*a, d_out.data());
                    }
                    if self.needs(*b) {
                        let neg: Vec<E> = d_out.data().iter().map(|&g| -g).collect();
                        self.accumulate(*b, &neg);
                    }
                }
            }
            Op::Mul { a, b, out } => {
                if let Some(d_out) = self.take_out_grad(*out) {
                    if self.needs(*a) {
                        let d: Vec<E> = d_out
                            .data()
                            .iter()
                            .zip(self.value(*b).data())
                            .map(|(&g, &bv)| g * bv)
                            .collect();
                        self.accumulate(*a, &d);
                    }
                    if self.needs(*b) {
                        let d: Vec<E> = d_out
                            .data()
                            .iter()
                            .zip(self.value(*a).data())
                            .map(|(&g, &av)| g * av)
                            .collect();
                        self.accumulate(*b, &d);
                    }
                }
            }
            Op::Div { a, b, out } => {
                if let Some(d_out) = self.take_out_grad(*out) {
                    if self.needs(*a) {
                        let d: Vec<E> = d_out
                            .data()
                            .iter()
                            .zip(self.value(*b).data())
                            .map(|(&g, &bv)| g / bv)
                            .collect();
                        self.accumulate(*a, &d);
                    }
                    if self.needs(*b) {
                        let d: Vec<E> = d_out
                            .data()
                            .iter()
                            .zip(self.value(*a).data().iter().zip(self.value(*b).data()))
                            .map(|(&g, (&av, &bv))| -g * av / (bv * bv))
                            .collect();
                        self.accumulate(*b, &d);
                    }
                }
            }
            Op::Scale { input, out, factor } => {
                if let Some(d_out) = self.take_out_grad(*out) {
                    if self.needs(*input) {
                        let d: Vec<E> = d_out.data().iter().map(|&g| g * *factor).collect();
                        self.accumulate(*input, &d);
                    }
                }
            }
            Op::AddScalar { input, out } => {
                if let Some(d_out) = self.take_out_grad(*out) {
                    if self.needs(*input) {
                        self.accumulate(*input, d_out.data());
                    }
                }
            }
            Op::MulChannel { input, lam, out } => {
                if let Some(d_out) = self.take_out_grad(*out) {
                    let (n, c, h, w) = self.value(*input).shape().nchw();
                    let spatial = h * w;
                    if self.needs(*input) {
                        let mut d_in = kernels::zeros(n * c * spatial);
                        for ni in 0..n {
                            for ci in 0..c {
                                let lv = self.value(*lam).data()[ci];
                                let g_row = &d_out.data()[(ni * c + ci) * spatial..][..spatial];
                                let d_row = &mut d_in[(ni * c + ci) * spatial..][..spatial];
                                for (d, &g) in d_row.iter_mut().zip(g_row) {
                                    *d = g * lv;
                                }
                            }
                        }
                        self.accumulate(*input, &d_in);
                    }
                    if self.needs(*lam) {
                        let mut d_lam = kernels::zeros(c);
                        for ni in 0..n {
                            for ci in 0..c {
                                let g_row = &d_out.data()[(ni * c + ci) * spatial..][..spatial];
                                let x_row =
                                    &self.value(*input).data()[(ni * c + ci) * spatial..][..spatial];
                                let mut acc = E::zero();
                                for (&g, &x) in g_row.iter().zip(x_row) {
                                    acc = acc + g * x;
                                }
                                d_lam[ci] = d_lam[ci] + acc;
                            }
                        }
                        self.accumulate(*lam, &d_lam);
                    }
                }
            }
            Op::ConcatChannels { inputs, out } => {
                if let Some(d_out) = self.take_out_grad(*out) {
                    let (n, c_total, h, w) = self.value(*out).shape().nchw();
                    let spatial = h * w;
                    let mut c_off = 0;
                    for &v in inputs {
                        let vc = self.value(v).shape().dim(1);
                        if self.needs(v) {
                            let mut d_v = kernels::zeros(n * vc * spatial);
                            for ni in 0..n {
                                let src = &d_out.data()
                                    [(ni * c_total + c_off) * spatial..][..vc * spatial];
                                d_v[ni * vc * spatial..][..vc * spatial].copy_from_slice(src);
                            }
                            self.accumulate(v, &d_v);
                        }
                        c_off += vc;
                    }
                }
            }
            Op::NchwToTokens { input, out } => {
                if let Some(d_out) = self.take_out_grad(*out) {
                    if self.needs(*input) {
                        let (n, c, h, w) = self.value(*input).shape().nchw();
                        let t = h * w;
                        let mut d_in = kernels::zeros(n * c * t);
                        for ni in 0..n {
                            for ci in 0..c {
                                for ti in 0..t {
                                    d_in[(ni * c + ci) * t + ti] =
                                        d_out.data()[(ni * t + ti) * c + ci];
                                }
                            }
                        }
                        self.accumulate(*input, &d_in);
                    }
                }
            }
            Op::TokensToNchw { input, out, h, w } => {
                if let Some(d_out) = self.take_out_grad(*out) {
                    if self.needs(*input) {
                        let shape = self.value(*input).shape();
                        let (n, t, c) = (shape.dim(0), shape.dim(1), shape.dim(2));
                        let _ = (h, w);
                        let mut d_in = kernels::zeros(n * t * c);
                        for ni in 0..n {
                            for ti in 0..t {
                                for ci in 0..c {
                                    d_in[(ni * t + ti) * c + ci] =
                                        d_out.data()[(ni * c + ci) * t + ti];
                                }
                            }
                        }
                        self.accumulate(*input, &d_in);
                    }
                }
            }
            Op::SumAll { input, out } => {
                if let Some(d_out) = self.take_out_grad(*out) {
                    if self.needs(*input) {
                        let g = d_out.item();
                        let d = vec![g; self.value(*input).numel()];
                        self.accumulate(*input, &d);
                    }
                }
            }
            Op::MeanAll { input, out } => {
                if let Some(d_out) = self.take_out_grad(*out) {
                    if self.needs(*input) {
                        let n = self.value(*input).numel();
                        let g = d_out.item() / E::from_f64(n as f64);
                        let d = vec![g; n];
                        self.accumulate(*input, &d);
                    }
                }
            }
            Op::SumPerSample { input, out } => {
                if let Some(d_out) = self.take_out_grad(*out) {
                    if self.needs(*input) {
                        let shape = self.value(*input).shape();
                        let n = shape.dim(0);
                        let per = shape.numel() / n;
                        let mut d = Vec::with_capacity(shape.numel());
                        for ni in 0..n {
                            let g = d_out.data()[ni];
                            d.extend(core::iter::repeat(g).take(per));
                        }
                        self.accumulate(*input, &d);
                    }
                }
            }
            Op::Abs { input, out } => {
                if let Some(d_out) = self.take_out_grad(*out) {
                    if self.needs(*input) {
                        let d: Vec<E> = self
                            .value(*input)
                            .data()
                            .iter()
                            .zip(d_out.data())
                            .map(|(&x, &g)| {
                                if x > E::zero() {
                                    g
                                } else if x < E::zero() {
                                    -g
                                } else {
                                    E::zero()
                                }
                            })
                            .collect();
                        self.accumulate(*input, &d);
                    }
                }
            }
        }
    }
}
