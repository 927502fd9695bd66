//! Finite-difference verification of tape gradients.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;

/// Above this many total coordinates the checker probes a fixed-seed subset.
pub const SUBSAMPLE_THRESHOLD: usize = 10_000;
/// Number of coordinates probed when subsampling.
pub const SUBSAMPLE_COUNT: usize = 2_000;

const SUBSAMPLE_SEED: u64 = 0x6772_6164; // "grad"

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub pass: bool,
    /// (input index, flat coordinate) of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub coords_checked: usize,
}

/// Relative error with a unit floor, so near-zero gradients are compared
/// absolutely.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

/// Check the gradient of a scalar-valued tape program against central
/// finite differences.
///
/// `build` receives a fresh tape plus one [`VarId`] per input tensor and
/// must return the scalar loss variable. The step is
/// `h = 1e-5 * max(1, |x|)` per coordinate; above
/// [`SUBSAMPLE_THRESHOLD`] total coordinates a fixed-seed subset of
/// [`SUBSAMPLE_COUNT`] coordinates is probed.
pub fn grad_check<F>(build: F, inputs: &[Tensor<f64>], tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[VarId]) -> Result<VarId>,
{
    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<VarId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    if tape.value(loss).numel() != 1 {
        return Err(Error::InvalidArgument(String::from(
            "grad_check: program must produce a scalar loss",
        )));
    }
    tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).cloned().expect("leaf gradient"))
        .collect();
    for (i, g) in analytic.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::Numerical(format!(
                "grad_check: non-finite analytic gradient in input {i}"
            )));
        }
    }

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<VarId> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        Ok(tape.value(loss).item())
    };

    // Coordinate list, optionally subsampled.
    let total: usize = inputs.iter().map(|t| t.numel()).sum();
    let coords: Vec<(usize, usize)> = if total <= SUBSAMPLE_THRESHOLD {
        let mut all = Vec::with_capacity(total);
        for (i, t) in inputs.iter().enumerate() {
            for j in 0..t.numel() {
                all.push((i, j));
            }
        }
        all
    } else {
        let mut rng = Stream::seed(SUBSAMPLE_SEED);
        let mut picked = Vec::with_capacity(SUBSAMPLE_COUNT);
        for _ in 0..SUBSAMPLE_COUNT {
            let mut flat = rng.below(total);
            let mut input_idx = 0;
            while flat >= inputs[input_idx].numel() {
                flat -= inputs[input_idx].numel();
                input_idx += 1;
            }
            picked.push((input_idx, flat));
        }
        picked
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut max_rel = 0.0f64;
    let mut worst = None;
    for &(i, j) in &coords {
        let x = inputs[i].data()[j];
        let h = 1e-5 * x.abs().max(1.0);

        work[i].data_mut()[j] = x + h;
        let f_plus = eval(&work)?;
        work[i].data_mut()[j] = x - h;
        let f_minus = eval(&work)?;
        work[i].data_mut()[j] = x;

        let numeric = (f_plus - f_minus) / (2.0 * h);
        if !numeric.is_finite() {
            return Err(Error::Numerical(format!(
                "grad_check: non-finite numeric gradient at input {i}, coordinate {j}"
            )));
        }
        let a = analytic[i].data()[j];
        let e = rel_err(a, numeric);
        if e > max_rel {
            max_rel = e;
            worst = Some((i, j));
        }
    }

    Ok(GradCheckReport {
        max_rel_err: max_rel,
        pass: max_rel < tol,
        worst,
        coords_checked: coords.len(),
    })
}

/// Finite-difference check of the full network loss gradient with respect
/// to the input image and a fixed-seed subsample of every parameter
/// tensor (`coords_per_tensor` coordinates each).
///
/// The analytic side is one tape backward pass; the numeric side re-runs
/// the forward loss with individually perturbed copies, so the two routes
/// share no adjoint code.
pub fn model_grad_check(
    model: &crate::net::Model<f64>,
    image: &Tensor<f64>,
    mask: &Tensor<f64>,
    weights: &crate::loss::LossWeights,
    coords_per_tensor: usize,
    tol: f64,
) -> Result<GradCheckReport> {
    use crate::loss::total_loss;
    use crate::net::Model;

    let eval = |m: &Model<f64>, img: &Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let image_var = tape.constant(img.clone());
        let mask_var = tape.constant(mask.clone());
        let vars = m.register(&mut tape);
        let out = m.forward(&mut tape, &vars, image_var)?;
        let loss = total_loss(
            &mut tape,
            out.confidence,
            mask_var,
            out.reconstruction,
            image_var,
            weights,
        )?;
        Ok(tape.value(loss.total).item())
    };

    // analytic gradients
    let mut tape = Tape::new();
    let image_var = tape.leaf(image.clone());
    let mask_var = tape.constant(mask.clone());
    let vars = model.register(&mut tape);
    let out = model.forward(&mut tape, &vars, image_var)?;
    let loss = total_loss(
        &mut tape,
        out.confidence,
        mask_var,
        out.reconstruction,
        image_var,
        weights,
    )?;
    tape.backward(loss.total)?;
    let analytic_params = tape.named_grads();
    let analytic_image = tape.grad(image_var).expect("image gradient").clone();
    for (name, g) in &analytic_params {
        if !g.is_finite() {
            return Err(Error::Numerical(format!(
                "model_grad_check: non-finite analytic gradient in {name}"
            )));
        }
    }

    let mut rng = Stream::seed(SUBSAMPLE_SEED);
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut checked = 0usize;

    // input image coordinates
    {
        let mut img = image.clone();
        for _ in 0..coords_per_tensor.min(image.numel()) {
            let j = rng.below(image.numel());
            let x = image.data()[j];
            let h = 1e-5 * x.abs().max(1.0);
            img.data_mut()[j] = x + h;
            let f_plus = eval(model, &img)?;
            img.data_mut()[j] = x - h;
            let f_minus = eval(model, &img)?;
            img.data_mut()[j] = x;
            let numeric = (f_plus - f_minus) / (2.0 * h);
            let e = rel_err(analytic_image.data()[j], numeric);
            checked += 1;
            if e > max_rel {
                max_rel = e;
                worst = Some((0, j));
            }
        }
    }

    // parameter coordinates, tensor by tensor
    let names: Vec<String> = analytic_params.iter().map(|(n, _)| n.clone()).collect();
    for (t_idx, name) in names.iter().enumerate() {
        let numel = analytic_params[t_idx].1.numel();
        for _ in 0..coords_per_tensor.min(numel) {
            let j = rng.below(numel);
            let mut perturbed = model.clone();
            let mut x = 0.0;
            perturbed.visit_params_mut(&mut |n, t| {
                if n == *name {
                    x = t.data()[j];
                }
            });
            let h = 1e-5 * x.abs().max(1.0);
            let set = |m: &mut Model<f64>, v: f64| {
                m.visit_params_mut(&mut |n, t| {
                    if n == *name {
                        t.data_mut()[j] = v;
                    }
                });
            };
            set(&mut perturbed, x + h);
            let f_plus = eval(&perturbed, image)?;
            set(&mut perturbed, x - h);
            let f_minus = eval(&perturbed, image)?;
            let numeric = (f_plus - f_minus) / (2.0 * h);
            if !numeric.is_finite() {
                return Err(Error::Numerical(format!(
                    "model_grad_check: non-finite numeric gradient at {name}[{j}]"
                )));
            }
            let e = rel_err(analytic_params[t_idx].1.data()[j], numeric);
            checked += 1;
            if e > max_rel {
                max_rel = e;
                worst = Some((t_idx + 1, j));
            }
        }
    }

    Ok(GradCheckReport {
        max_rel_err: max_rel,
        pass: max_rel < tol,
        worst,
        coords_checked: checked,
    })
}
