//! Finite-difference verification of every differentiable operation, the
//! composite blocks, the losses, and the assembled network.

use irstd_core::blocks::{AttnParams, DownBlockParams, ResBlockParams, UpBlockParams};
use irstd_core::gradcheck::{grad_check, model_grad_check};
use irstd_core::loss::{l1_loss, mse_loss, soft_iou_loss, LossWeights};
use irstd_core::net::{Model, ModelConfig};
use irstd_core::rng::Stream;
use irstd_core::tape::Tape;
use irstd_core::tensor::{Shape, Tensor};

fn rand(shape: Shape, seed: u64, scale: f64) -> Tensor<f64> {
    let mut rng = Stream::seed(seed);
    Tensor::from_fn(shape, |_| rng.normal() * scale)
}

/// Keep values away from the ReLU kink so central differences are valid.
fn rand_off_kink(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = Stream::seed(seed);
    Tensor::from_fn(shape, |_| {
        let v = rng.normal();
        if v.abs() < 5e-3 {
            v + 0.1
        } else {
            v
        }
    })
}

#[test]
fn conv2d_gradient_matches_finite_differences() {
    // the documented case: random 2x3x8x8 input, gradient of sum(output)
    let input = rand(Shape::d4(2, 3, 8, 8), 1, 1.0);
    let weight = rand(Shape::d4(4, 3, 3, 3), 2, 0.5);
    let bias = rand(Shape::d1(4), 3, 0.2);
    let report = grad_check(
        |tape, ids| {
            let y = tape.conv2d(ids[0], ids[1], ids[2], 1, 1)?;
            Ok(tape.sum_all(y))
        },
        &[input, weight, bias],
        1e-6,
    )
    .unwrap();
    assert!(report.pass, "max_rel_err {}", report.max_rel_err);
}

#[test]
fn strided_conv2d_gradient() {
    let input = rand(Shape::d4(1, 2, 8, 8), 4, 1.0);
    let weight = rand(Shape::d4(3, 2, 3, 3), 5, 0.5);
    let bias = rand(Shape::d1(3), 6, 0.2);
    let report = grad_check(
        |tape, ids| {
            let y = tape.conv2d(ids[0], ids[1], ids[2], 2, 1)?;
            // nonuniform downstream weighting to exercise every adjoint path
            let sq = tape.mul(y, y)?;
            Ok(tape.sum_all(sq))
        },
        &[input, weight, bias],
        1e-6,
    )
    .unwrap();
    assert!(report.pass, "max_rel_err {}", report.max_rel_err);
}

#[test]
fn pointwise_conv_gradient() {
    let input = rand(Shape::d4(2, 4, 4, 4), 7, 1.0);
    let weight = rand(Shape::d4(2, 4, 1, 1), 8, 0.5);
    let bias = rand(Shape::d1(2), 9, 0.2);
    let report = grad_check(
        |tape, ids| {
            let y = tape.conv2d(ids[0], ids[1], ids[2], 1, 0)?;
            Ok(tape.sum_all(y))
        },
        &[input, weight, bias],
        1e-7,
    )
    .unwrap();
    assert!(report.pass, "max_rel_err {}", report.max_rel_err);
}

#[test]
fn group_norm_gradient() {
    let input = rand(Shape::d4(2, 4, 3, 3), 10, 1.0);
    let gamma = rand(Shape::d1(4), 11, 0.5).map(|v| v + 1.0);
    let beta = rand(Shape::d1(4), 12, 0.3);
    let report = grad_check(
        |tape, ids| {
            let y = tape.group_norm(ids[0], 2, ids[1], ids[2], 1e-5)?;
            let sq = tape.mul(y, y)?;
            Ok(tape.sum_all(sq))
        },
        &[input, gamma, beta],
        1e-5,
    )
    .unwrap();
    assert!(report.pass, "max_rel_err {}", report.max_rel_err);
}

#[test]
fn relu_gradient_away_from_kink() {
    let input = rand_off_kink(Shape::d4(1, 2, 4, 4), 13);
    let report = grad_check(
        |tape, ids| {
            let y = tape.relu(ids[0]);
            let sq = tape.mul(y, y)?;
            Ok(tape.sum_all(sq))
        },
        &[input],
        1e-6,
    )
    .unwrap();
    assert!(report.pass, "max_rel_err {}", report.max_rel_err);
}

#[test]
fn sigmoid_gradient() {
    let input = rand(Shape::d2(4, 5), 14, 2.0);
    let report = grad_check(
        |tape, ids| {
            let y = tape.sigmoid(ids[0]);
            let sq = tape.mul(y, y)?;
            Ok(tape.sum_all(sq))
        },
        &[input],
        1e-6,
    )
    .unwrap();
    assert!(report.pass, "max_rel_err {}", report.max_rel_err);
}

#[test]
fn upsample_gradient_is_exact_for_linear_map() {
    let input = rand(Shape::d4(1, 3, 3, 4), 15, 1.0);
    let report = grad_check(
        |tape, ids| {
            let y = tape.upsample2x(ids[0]);
            Ok(tape.sum_all(y))
        },
        &[input],
        1e-8,
    )
    .unwrap();
    assert!(report.pass, "max_rel_err {}", report.max_rel_err);
}

#[test]
fn matmul_gradients() {
    // plain rank-2
    let a = rand(Shape::d2(3, 4), 16, 1.0);
    let b = rand(Shape::d2(4, 5), 17, 1.0);
    let report = grad_check(
        |tape, ids| {
            let y = tape.matmul(ids[0], ids[1])?;
            Ok(tape.sum_all(y))
        },
        &[a, b],
        1e-8,
    )
    .unwrap();
    assert!(report.pass, "rank-2: {}", report.max_rel_err);

    // batched with broadcast rhs
    let a = rand(Shape::d3(2, 3, 4), 18, 1.0);
    let b = rand(Shape::d2(4, 3), 19, 1.0);
    let report = grad_check(
        |tape, ids| {
            let y = tape.matmul(ids[0], ids[1])?;
            let sq = tape.mul(y, y)?;
            Ok(tape.sum_all(sq))
        },
        &[a, b],
        1e-7,
    )
    .unwrap();
    assert!(report.pass, "broadcast: {}", report.max_rel_err);

    // batched transposed-rhs product
    let a = rand(Shape::d3(2, 3, 4), 20, 1.0);
    let b = rand(Shape::d3(2, 5, 4), 21, 1.0);
    let report = grad_check(
        |tape, ids| {
            let y = tape.matmul_tb(ids[0], ids[1])?;
            let sq = tape.mul(y, y)?;
            Ok(tape.sum_all(sq))
        },
        &[a, b],
        1e-7,
    )
    .unwrap();
    assert!(report.pass, "matmul_tb: {}", report.max_rel_err);
}

#[test]
fn softmax_gradient() {
    let input = rand(Shape::d3(2, 3, 5), 22, 2.0);
    let report = grad_check(
        |tape, ids| {
            let y = tape.softmax_last(ids[0]);
            let sq = tape.mul(y, y)?;
            Ok(tape.sum_all(sq))
        },
        &[input],
        1e-6,
    )
    .unwrap();
    assert!(report.pass, "max_rel_err {}", report.max_rel_err);
}

#[test]
fn elementwise_and_reduction_gradients() {
    let a = rand(Shape::d2(3, 4), 23, 1.0);
    let b = rand(Shape::d2(3, 4), 24, 1.0).map(|v| v + 3.0); // divisor away from 0
    let report = grad_check(
        |tape, ids| {
            let s = tape.sub(ids[0], ids[1])?;
            let d = tape.div(ids[0], ids[1])?;
            let m = tape.mul(s, d)?;
            let sc = tape.scale(m, 0.7);
            let sh = tape.add_scalar(sc, 0.3);
            let mean = tape.mean_all(sh);
            let per = tape.sum_per_sample(ids[0]);
            let per_mean = tape.mean_all(per);
            tape.add(mean, per_mean)
        },
        &[a, b],
        1e-7,
    )
    .unwrap();
    assert!(report.pass, "max_rel_err {}", report.max_rel_err);
}

#[test]
fn abs_gradient_away_from_zero() {
    let input = rand_off_kink(Shape::d2(4, 4), 25);
    let report = grad_check(
        |tape, ids| {
            let y = tape.abs(ids[0]);
            Ok(tape.mean_all(y))
        },
        &[input],
        1e-7,
    )
    .unwrap();
    assert!(report.pass, "max_rel_err {}", report.max_rel_err);
}

#[test]
fn mul_channel_and_concat_gradients() {
    let x = rand(Shape::d4(2, 3, 2, 2), 26, 1.0);
    let lam = rand(Shape::d1(3), 27, 0.5);
    let y2 = rand(Shape::d4(2, 2, 2, 2), 28, 1.0);
    let report = grad_check(
        |tape, ids| {
            let scaled = tape.mul_channel(ids[0], ids[1])?;
            let cat = tape.concat_channels(&[scaled, ids[2]])?;
            let tok = tape.nchw_to_tokens(cat);
            let back = tape.tokens_to_nchw(tok, 2, 2)?;
            let sq = tape.mul(back, back)?;
            Ok(tape.sum_all(sq))
        },
        &[x, lam, y2],
        1e-7,
    )
    .unwrap();
    assert!(report.pass, "max_rel_err {}", report.max_rel_err);
}

#[test]
fn resblock_gradient() {
    let c = 8;
    let mut rng = Stream::seed(29);
    let params = ResBlockParams::<Tensor<f64>>::init(c, 8, &mut rng);
    let x = rand(Shape::d4(1, c, 4, 4), 30, 0.8);

    // inputs: x plus every parameter tensor, in a fixed order
    let inputs = vec![
        x,
        params.conv1_w.clone(),
        params.conv1_b.clone(),
        params.gn1_gamma.clone(),
        params.gn1_beta.clone(),
        params.lambda1.clone(),
        params.conv2_w.clone(),
        params.conv2_b.clone(),
        params.gn2_gamma.clone(),
        params.gn2_beta.clone(),
        params.lambda2.clone(),
    ];
    let report = grad_check(
        |tape, ids| {
            let vars = ResBlockParams {
                conv1_w: ids[1],
                conv1_b: ids[2],
                gn1_gamma: ids[3],
                gn1_beta: ids[4],
                lambda1: ids[5],
                conv2_w: ids[6],
                conv2_b: ids[7],
                gn2_gamma: ids[8],
                gn2_beta: ids[9],
                lambda2: ids[10],
                channels: c,
                groups: 8,
            };
            let y = vars.forward(tape, ids[0])?;
            let sq = tape.mul(y, y)?;
            Ok(tape.sum_all(sq))
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(report.pass, "max_rel_err {}", report.max_rel_err);
}

#[test]
fn attention_gradient() {
    let c = 8;
    let mut rng = Stream::seed(31);
    let params = AttnParams::<Tensor<f64>>::init(c, &mut rng);
    let x = rand(Shape::d4(1, c, 4, 4), 32, 0.8);
    let inputs = vec![
        x,
        params.wq.clone(),
        params.wk.clone(),
        params.wv.clone(),
        params.wo.clone(),
    ];
    let report = grad_check(
        |tape, ids| {
            let vars = AttnParams {
                wq: ids[1],
                wk: ids[2],
                wv: ids[3],
                wo: ids[4],
                d_k: c,
            };
            let y = vars.forward(tape, ids[0])?;
            let sq = tape.mul(y, y)?;
            Ok(tape.sum_all(sq))
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(report.pass, "max_rel_err {}", report.max_rel_err);
}

#[test]
fn down_and_up_blocks_leave_no_dead_parameters() {
    let mut rng = Stream::seed(33);
    let down = DownBlockParams::<Tensor<f64>>::init(4, 2, 8, &mut rng);
    let up = UpBlockParams::<Tensor<f64>>::init(4, 2, 8, &mut rng);
    let x = rand(Shape::d4(2, 4, 8, 8), 34, 0.8);

    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let dv = down.register(&mut tape, "down");
    let uv = up.register(&mut tape, "up");
    let (skips, bottom) = dv.forward(&mut tape, xv).unwrap();
    let y = uv.forward(&mut tape, bottom, &skips).unwrap();
    let sq = tape.mul(y, y).unwrap();
    let loss = tape.sum_all(sq);
    tape.backward(loss).unwrap();

    for (name, grad) in tape.named_grads() {
        let max = grad.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max > 0.0, "parameter {name} received a zero gradient");
    }
}

#[test]
fn loss_gradients() {
    let mut rng = Stream::seed(35);
    let shape = Shape::d4(2, 1, 4, 4);
    let conf = Tensor::from_fn(shape, |_| 0.05 + 0.9 * rng.uniform());
    let mask = Tensor::from_fn(shape, |i| if i % 3 == 0 { 1.0 } else { 0.0 });
    let rec = Tensor::from_fn(shape, |_| rng.uniform());
    let img = Tensor::from_fn(shape, |_| rng.uniform());

    let mask_for = mask.clone();
    let report = grad_check(
        |tape, ids| {
            let m = tape.constant(mask_for.clone());
            soft_iou_loss(tape, ids[0], m, 1e-6)
        },
        &[conf.clone()],
        1e-5,
    )
    .unwrap();
    assert!(report.pass, "soft_iou: {}", report.max_rel_err);

    // l1 against a fixed target; confidences differ from mask values, so no
    // kink is probed
    let mask_for = mask.clone();
    let report = grad_check(
        |tape, ids| {
            let m = tape.constant(mask_for.clone());
            l1_loss(tape, ids[0], m)
        },
        &[conf.clone()],
        1e-5,
    )
    .unwrap();
    assert!(report.pass, "l1: {}", report.max_rel_err);

    let report = grad_check(
        |tape, ids| mse_loss(tape, ids[0], ids[1]),
        &[rec, img],
        1e-5,
    )
    .unwrap();
    assert!(report.pass, "mse: {}", report.max_rel_err);
}

#[test]
fn full_network_gradient_on_tiny_config() {
    let cfg = ModelConfig {
        stages: 2,
        channels: vec![4, 8],
        resblocks_per_encoder_stage: 2,
        attention_blocks: 1,
        groupnorm_groups: 8,
        seed: 40,
    };
    let model = Model::<f64>::build(cfg).unwrap();
    let mut rng = Stream::seed(41);
    let image = Tensor::from_fn(Shape::d4(1, 1, 16, 16), |_| rng.uniform());
    let mask = Tensor::from_fn(Shape::d4(1, 1, 16, 16), |i| {
        if i == 50 || i == 51 || i == 66 {
            1.0
        } else {
            0.0
        }
    });
    let report = model_grad_check(&model, &image, &mask, &LossWeights::default(), 6, 1e-4)
        .unwrap();
    assert!(
        report.pass,
        "full network: max_rel_err {} over {} coords",
        report.max_rel_err, report.coords_checked
    );
}
