//! The compression–reconstruction–subtraction detector.
//!
//! A stem conv lifts the single-channel image to feature space (F_I). A
//! densely connected encoder–decoder (the compression–reconstruction
//! module) predicts the background features F_B at identical shape. The
//! subtraction module forms F_T = ResBlock(F_I - F_B) and the recomposed
//! F̂_I = F_T + F_B. A sigmoid head on F_T yields the target confidence
//! map; a linear head on F̂_I reconstructs the input image.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::blocks::{
    conv_init_linear, AttnParams, DownBlockParams, ResBlockParams, UpBlockParams,
};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tape::{Tape, VarId};
use crate::tensor::{Shape, Tensor};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub stages: usize,
    pub channels: Vec<usize>,
    pub resblocks_per_encoder_stage: usize,
    /// Self-attention blocks at the bottleneck (0, 1 or 2).
    pub attention_blocks: usize,
    pub groupnorm_groups: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stages: 4,
            channels: alloc::vec![16, 32, 64, 128],
            resblocks_per_encoder_stage: 2,
            attention_blocks: 1,
            groupnorm_groups: 8,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Reduced configuration for tests and toy runs.
    pub fn tiny(seed: u64) -> Self {
        ModelConfig {
            stages: 2,
            channels: alloc::vec![8, 16],
            resblocks_per_encoder_stage: 2,
            attention_blocks: 1,
            groupnorm_groups: 8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(crate::invalid_arg!("config: stages must be >= 1"));
        }
        if self.channels.len() != self.stages {
            return Err(crate::invalid_arg!(
                "config: channels has {} entries but stages = {}",
                self.channels.len(),
                self.stages
            ));
        }
        for w in self.channels.windows(2) {
            if w[1] != 2 * w[0] {
                return Err(crate::invalid_arg!(
                    "config: channels must double per stage, got {} -> {}",
                    w[0],
                    w[1]
                ));
            }
        }
        if self.channels[0] == 0 {
            return Err(crate::invalid_arg!("config: channels must be positive"));
        }
        if self.attention_blocks > 2 {
            return Err(crate::invalid_arg!(
                "config: attention_blocks must be 0, 1 or 2, got {}",
                self.attention_blocks
            ));
        }
        if self.resblocks_per_encoder_stage == 0 {
            return Err(crate::invalid_arg!(
                "config: resblocks_per_encoder_stage must be >= 1"
            ));
        }
        if self.groupnorm_groups == 0 {
            return Err(crate::invalid_arg!("config: groupnorm_groups must be >= 1"));
        }
        Ok(())
    }

    /// Input spatial extents must be divisible by this.
    pub fn spatial_divisor(&self) -> usize {
        1 << self.stages
    }

    /// Channel width at the bottleneck (after the last downsampling conv).
    pub fn bottleneck_channels(&self) -> usize {
        2 * self.channels[self.stages - 1]
    }
}

/// Named parameter store realizing the network.
#[derive(Clone)]
pub struct Model<E: Scalar> {
    pub config: ModelConfig,
    pub stem_w: Tensor<E>,
    pub stem_b: Tensor<E>,
    pub encoder: Vec<DownBlockParams<Tensor<E>>>,
    pub attn: Vec<AttnParams<Tensor<E>>>,
    pub decoder: Vec<UpBlockParams<Tensor<E>>>,
    /// Affine of the normalization applied to the reconstructed background
    /// features. Without it the encoder-decoder trunk has an unnormalized
    /// multiplicative path and F_B's scale can run away during training,
    /// saturating the sigmoid head.
    pub crm_gn_gamma: Tensor<E>,
    pub crm_gn_beta: Tensor<E>,
    pub sub_res: ResBlockParams<Tensor<E>>,
    pub seg_w: Tensor<E>,
    pub seg_b: Tensor<E>,
    pub rec_w: Tensor<E>,
    pub rec_b: Tensor<E>,
}

/// Registered tape handles for one forward pass.
pub struct ModelVars {
    pub stem_w: VarId,
    pub stem_b: VarId,
    pub encoder: Vec<DownBlockParams<VarId>>,
    pub attn: Vec<AttnParams<VarId>>,
    pub decoder: Vec<UpBlockParams<VarId>>,
    pub crm_gn_gamma: VarId,
    pub crm_gn_beta: VarId,
    pub sub_res: ResBlockParams<VarId>,
    pub seg_w: VarId,
    pub seg_b: VarId,
    pub rec_w: VarId,
    pub rec_b: VarId,
}

/// Tape handles of the interesting intermediate maps of a forward pass.
pub struct ForwardVars {
    pub f_i: VarId,
    pub f_b: VarId,
    pub f_t: VarId,
    pub f_hat: VarId,
    pub confidence: VarId,
    pub reconstruction: VarId,
    /// Input values fell outside [0,1]; reported, not fatal.
    pub input_range_warning: bool,
}

/// Inference output (values detached from any tape).
#[derive(Debug)]
pub struct Prediction<E: Scalar> {
    pub confidence: Tensor<E>,
    pub reconstruction: Tensor<E>,
    pub input_range_warning: bool,
}

impl<E: Scalar> Model<E> {
    /// Deterministic initialization from `config.seed`.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Stream::derive(config.seed, 0x6d6f_64656c, 0); // "model"
        let g = config.groupnorm_groups;
        let r = config.resblocks_per_encoder_stage;
        let c0 = config.channels[0];

        let stem_w = conv_init_linear(c0, 1, 3, &mut rng);
        let stem_b = Tensor::zeros(Shape::d1(c0));

        let encoder: Vec<_> = config
            .channels
            .iter()
            .map(|&c| DownBlockParams::init(c, r, g, &mut rng))
            .collect();

        let cb = config.bottleneck_channels();
        let attn: Vec<_> = (0..config.attention_blocks)
            .map(|_| AttnParams::init(cb, &mut rng))
            .collect();

        // decoder listed bottom-up: decoder[i] restores channels[i]
        let decoder: Vec<_> = config
            .channels
            .iter()
            .map(|&c| UpBlockParams::init(c, r, g, &mut rng))
            .collect();

        let crm_gn_gamma = Tensor::full(Shape::d1(c0), E::one());
        let crm_gn_beta = Tensor::zeros(Shape::d1(c0));
        let sub_res = ResBlockParams::init(c0, g, &mut rng);
        let seg_w = conv_init_linear(1, c0, 3, &mut rng);
        let seg_b = Tensor::zeros(Shape::d1(1));
        let rec_w = conv_init_linear(1, c0, 3, &mut rng);
        let rec_b = Tensor::zeros(Shape::d1(1));

        Ok(Model {
            config,
            stem_w,
            stem_b,
            encoder,
            attn,
            decoder,
            crm_gn_gamma,
            crm_gn_beta,
            sub_res,
            seg_w,
            seg_b,
            rec_w,
            rec_b,
        })
    }

    pub fn visit_params(&self, f: &mut impl FnMut(String, &Tensor<E>)) {
        f(String::from("stem.w"), &self.stem_w);
        f(String::from("stem.b"), &self.stem_b);
        for (i, d) in self.encoder.iter().enumerate() {
            d.visit(&format!("enc{i}"), f);
        }
        for (i, a) in self.attn.iter().enumerate() {
            a.visit(&format!("attn{i}"), f);
        }
        for (i, u) in self.decoder.iter().enumerate() {
            u.visit(&format!("dec{i}"), f);
        }
        f(String::from("crm.gn.gamma"), &self.crm_gn_gamma);
        f(String::from("crm.gn.beta"), &self.crm_gn_beta);
        self.sub_res.visit("sub.res", f);
        f(String::from("seg.w"), &self.seg_w);
        f(String::from("seg.b"), &self.seg_b);
        f(String::from("rec.w"), &self.rec_w);
        f(String::from("rec.b"), &self.rec_b);
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(String, &mut Tensor<E>)) {
        f(String::from("stem.w"), &mut self.stem_w);
        f(String::from("stem.b"), &mut self.stem_b);
        for (i, d) in self.encoder.iter_mut().enumerate() {
            d.visit_mut(&format!("enc{i}"), f);
        }
        for (i, a) in self.attn.iter_mut().enumerate() {
            a.visit_mut(&format!("attn{i}"), f);
        }
        for (i, u) in self.decoder.iter_mut().enumerate() {
            u.visit_mut(&format!("dec{i}"), f);
        }
        f(String::from("crm.gn.gamma"), &mut self.crm_gn_gamma);
        f(String::from("crm.gn.beta"), &mut self.crm_gn_beta);
        self.sub_res.visit_mut("sub.res", f);
        f(String::from("seg.w"), &mut self.seg_w);
        f(String::from("seg.b"), &mut self.seg_b);
        f(String::from("rec.w"), &mut self.rec_w);
        f(String::from("rec.b"), &mut self.rec_b);
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let mut count = 0;
        self.visit_params(&mut |_, t| count += t.numel());
        count
    }

    /// Flat parameter snapshot in visit order.
    pub fn named_params(&self) -> Vec<(String, Tensor<E>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, t| out.push((name, t.clone())));
        out
    }

    /// Register every parameter on a tape; registration order equals visit
    /// order, which the optimizer relies on.
    pub fn register(&self, tape: &mut Tape<E>) -> ModelVars {
        ModelVars {
            stem_w: tape.param("stem.w", self.stem_w.clone()),
            stem_b: tape.param("stem.b", self.stem_b.clone()),
            encoder: self
                .encoder
                .iter()
                .enumerate()
                .map(|(i, d)| d.register(tape, &format!("enc{i}")))
                .collect(),
            attn: self
                .attn
                .iter()
                .enumerate()
                .map(|(i, a)| a.register(tape, &format!("attn{i}")))
                .collect(),
            decoder: self
                .decoder
                .iter()
                .enumerate()
                .map(|(i, u)| u.register(tape, &format!("dec{i}")))
                .collect(),
            crm_gn_gamma: tape.param("crm.gn.gamma", self.crm_gn_gamma.clone()),
            crm_gn_beta: tape.param("crm.gn.beta", self.crm_gn_beta.clone()),
            sub_res: self.sub_res.register(tape, "sub.res"),
            seg_w: tape.param("seg.w", self.seg_w.clone()),
            seg_b: tape.param("seg.b", self.seg_b.clone()),
            rec_w: tape.param("rec.w", self.rec_w.clone()),
            rec_b: tape.param("rec.b", self.rec_b.clone()),
        }
    }

    fn check_input(&self, shape: Shape) -> Result<()> {
        if shape.rank() != 4 || shape.dim(1) != 1 {
            return Err(crate::invalid_arg!(
                "forward: expected [N,1,H,W] input, got {shape}"
            ));
        }
        let div = self.config.spatial_divisor();
        let (_, _, h, w) = shape.nchw();
        if h % div != 0 || w % div != 0 {
            return Err(crate::invalid_arg!(
                "forward: spatial extents {h}x{w} must be divisible by {div}"
            ));
        }
        Ok(())
    }

    /// Compression–reconstruction module: F_I -> F_B at identical shape.
    pub fn crm_forward(
        &self,
        tape: &mut Tape<E>,
        vars: &ModelVars,
        f_i: VarId,
    ) -> Result<VarId> {
        let mut skips_per_stage: Vec<Vec<VarId>> = Vec::with_capacity(self.config.stages);
        let mut cur = f_i;
        for down in &vars.encoder {
            let (skips, out) = down.forward(tape, cur)?;
            skips_per_stage.push(skips);
            cur = out;
        }
        for attn in &vars.attn {
            cur = attn.forward(tape, cur)?;
        }
        for (up, skips) in vars.decoder.iter().rev().zip(skips_per_stage.iter().rev()) {
            cur = up.forward(tape, cur, skips)?;
        }
        // normalize the background features; see the field doc on Model
        let groups = crate::blocks::gn_groups(self.config.channels[0], self.config.groupnorm_groups);
        tape.group_norm(
            cur,
            groups,
            vars.crm_gn_gamma,
            vars.crm_gn_beta,
            crate::blocks::GN_EPS,
        )
    }

    /// Subtraction module: (F_I, F_B) -> (F_T, F̂_I).
    pub fn subtraction_forward(
        &self,
        tape: &mut Tape<E>,
        vars: &ModelVars,
        f_i: VarId,
        f_b: VarId,
    ) -> Result<(VarId, VarId)> {
        if tape.value(f_i).shape() != tape.value(f_b).shape() {
            return Err(Error::ShapeMismatch {
                op: "subtraction: feature maps",
                expected: tape.value(f_i).shape(),
                got: tape.value(f_b).shape(),
            });
        }
        let diff = tape.sub(f_i, f_b)?;
        let f_t = vars.sub_res.forward(tape, diff)?;
        let f_hat = tape.add(f_t, f_b)?;
        Ok((f_t, f_hat))
    }

    /// Full forward pass on an existing tape.
    pub fn forward(
        &self,
        tape: &mut Tape<E>,
        vars: &ModelVars,
        image: VarId,
    ) -> Result<ForwardVars> {
        let shape = tape.value(image).shape();
        self.check_input(shape)?;
        let input_range_warning = tape
            .value(image)
            .data()
            .iter()
            .any(|&v| v < E::zero() || v > E::one());

        let f_i = tape.conv2d(image, vars.stem_w, vars.stem_b, 1, 1)?;
        let f_b = self.crm_forward(tape, vars, f_i)?;
        let (f_t, f_hat) = self.subtraction_forward(tape, vars, f_i, f_b)?;

        let seg_logits = tape.conv2d(f_t, vars.seg_w, vars.seg_b, 1, 1)?;
        let confidence = tape.sigmoid(seg_logits);
        let reconstruction = tape.conv2d(f_hat, vars.rec_w, vars.rec_b, 1, 1)?;

        Ok(ForwardVars {
            f_i,
            f_b,
            f_t,
            f_hat,
            confidence,
            reconstruction,
            input_range_warning,
        })
    }

    /// Confidence map for a single H x W image.
    pub fn infer_one(&self, image: &Tensor<E>) -> Result<Tensor<E>> {
        let shape = image.shape();
        if shape.rank() != 2 {
            return Err(crate::invalid_arg!(
                "infer_one: expected rank-2 image, got {shape}"
            ));
        }
        let (h, w) = (shape.dim(0), shape.dim(1));
        let batched = image.clone().reshaped(Shape::d4(1, 1, h, w))?;
        let pred = self.infer(&batched)?;
        pred.confidence.reshaped(Shape::d2(h, w))
    }

    /// Convenience inference on a detached tape.
    pub fn infer(&self, image: &Tensor<E>) -> Result<Prediction<E>> {
        let mut tape = Tape::new();
        let img = tape.constant(image.clone());
        let vars = self.register(&mut tape);
        let out = self.forward(&mut tape, &vars, img)?;
        Ok(Prediction {
            confidence: tape.value(out.confidence).clone(),
            reconstruction: tape.value(out.reconstruction).clone(),
            input_range_warning: out.input_range_warning,
        })
    }

    /// Overwrite parameters from a named list (checkpoint restore). Every
    /// name must match an existing parameter in shape.
    pub fn load_named_params(&mut self, entries: &[(String, Tensor<E>)]) -> Result<()> {
        use alloc::collections::BTreeMap;
        let mut map: BTreeMap<&str, &Tensor<E>> =
            entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut err: Option<Error> = None;
        self.visit_params_mut(&mut |name, t| {
            if err.is_some() {
                return;
            }
            match map.remove(name.as_str()) {
                Some(src) if src.shape() == t.shape() => *t = src.clone(),
                Some(src) => {
                    err = Some(Error::ShapeMismatch {
                        op: "load: parameter shape",
                        expected: t.shape(),
                        got: src.shape(),
                    })
                }
                None => err = Some(crate::invalid_arg!("load: missing parameter {name}")),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if let Some((name, _)) = map.into_iter().next() {
            return Err(crate::invalid_arg!("load: unknown parameter {name}"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_param_count_is_in_the_documented_band() {
        let model = Model::<f32>::build(ModelConfig::default()).unwrap();
        let count = model.param_count();
        assert!(
            (2_400_000..=4_500_000).contains(&count),
            "param count {count} outside [2.4M, 4.5M]"
        );
    }

    #[test]
    fn tiny_config_param_count_matches_closed_form() {
        let cfg = ModelConfig {
            stages: 2,
            channels: alloc::vec![8, 16],
            resblocks_per_encoder_stage: 2,
            attention_blocks: 1,
            groupnorm_groups: 8,
            seed: 0,
        };
        let model = Model::<f64>::build(cfg).unwrap();

        let res = |c: usize| 18 * c * c + 8 * c;
        let down = |c: usize| 2 * res(c) + 18 * c * c + 2 * c;
        let up = |c: usize| (18 * c * c + c) + (3 * c * c + c) + 3 * res(c);
        let stem = 9 * 8 + 8;
        let attn = 4 * 32 * 32;
        let heads = 2 * (9 * 8 + 1);
        let crm_gn = 2 * 8;
        let expected = stem + down(8) + down(16) + attn + up(8) + up(16) + crm_gn + res(8) + heads;
        assert_eq!(model.param_count(), expected);
    }

    #[test]
    fn doubling_channels_roughly_quadruples_parameters() {
        let small = Model::<f64>::build(ModelConfig {
            stages: 2,
            channels: alloc::vec![8, 16],
            resblocks_per_encoder_stage: 2,
            attention_blocks: 0,
            groupnorm_groups: 8,
            seed: 0,
        })
        .unwrap();
        let big = Model::<f64>::build(ModelConfig {
            stages: 2,
            channels: alloc::vec![16, 32],
            resblocks_per_encoder_stage: 2,
            attention_blocks: 0,
            groupnorm_groups: 8,
            seed: 0,
        })
        .unwrap();
        let ratio = big.param_count() as f64 / small.param_count() as f64;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let cfg = ModelConfig::tiny(9);
        let a = Model::<f64>::build(cfg.clone()).unwrap();
        let b = Model::<f64>::build(cfg).unwrap();
        let pa = a.named_params();
        let pb = b.named_params();
        assert_eq!(pa.len(), pb.len());
        for ((na, ta), (nb, tb)) in pa.iter().zip(pb.iter()) {
            assert_eq!(na, nb);
            assert!(ta.bit_eq(tb), "parameter {na} differs between builds");
        }
        let c = Model::<f64>::build(ModelConfig::tiny(10)).unwrap();
        assert!(!a.stem_w.bit_eq(&c.stem_w));
    }

    #[test]
    fn config_validation_rejects_bad_ladders() {
        let mut cfg = ModelConfig::default();
        cfg.channels = alloc::vec![16, 32, 64];
        assert!(Model::<f64>::build(cfg).is_err());

        let mut cfg = ModelConfig::default();
        cfg.channels = alloc::vec![16, 32, 64, 100];
        assert!(Model::<f64>::build(cfg).is_err());

        let mut cfg = ModelConfig::default();
        cfg.attention_blocks = 3;
        assert!(Model::<f64>::build(cfg).is_err());
    }

    #[test]
    fn forward_preserves_shape_and_confidence_range() {
        let model = Model::<f64>::build(ModelConfig::tiny(3)).unwrap();
        let mut rng = Stream::seed(4);
        let image = Tensor::from_fn(Shape::d4(1, 1, 16, 16), |_| rng.uniform());
        let pred = model.infer(&image).unwrap();
        assert_eq!(pred.confidence.shape(), image.shape());
        assert_eq!(pred.reconstruction.shape(), image.shape());
        assert!(pred
            .confidence
            .data()
            .iter()
            .all(|&v| v > 0.0 && v < 1.0));
        assert!(!pred.input_range_warning);

        let out_of_range = Tensor::full(Shape::d4(1, 1, 16, 16), 2.0);
        assert!(model.infer(&out_of_range).unwrap().input_range_warning);
    }

    #[test]
    fn forward_rejects_indivisible_extents() {
        let model = Model::<f64>::build(ModelConfig::tiny(3)).unwrap();
        let image = Tensor::zeros(Shape::d4(1, 1, 10, 12));
        let err = model.infer(&image).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("divisible by 4"), "{msg}");
    }

    #[test]
    fn attention_free_variant_runs() {
        let mut cfg = ModelConfig::tiny(5);
        cfg.attention_blocks = 0;
        let model = Model::<f64>::build(cfg).unwrap();
        let image = Tensor::zeros(Shape::d4(1, 1, 8, 8));
        model.infer(&image).unwrap();
    }

    #[test]
    fn recomposition_equals_sum_of_parts_bitwise() {
        let model = Model::<f64>::build(ModelConfig::tiny(6)).unwrap();
        let mut rng = Stream::seed(7);
        let image = Tensor::from_fn(Shape::d4(2, 1, 8, 8), |_| rng.uniform());

        let mut tape = Tape::new();
        let img = tape.constant(image);
        let vars = model.register(&mut tape);
        let out = model.forward(&mut tape, &vars, img).unwrap();

        let f_t = tape.value(out.f_t);
        let f_b = tape.value(out.f_b);
        let f_hat = tape.value(out.f_hat);
        for ((&t, &b), &h) in f_t.data().iter().zip(f_b.data()).zip(f_hat.data()) {
            assert_eq!((t + b).to_bits(), h.to_bits());
        }
    }

    #[test]
    fn identity_background_with_zero_bias_resblock_yields_exact_recomposition() {
        // F_I == F_B makes F_T a zero-input resblock output: exactly zero
        // with zero biases, so F̂_I == F_B.
        let model = Model::<f64>::build(ModelConfig::tiny(8)).unwrap();
        let mut tape = Tape::new();
        let f = tape.constant(Tensor::from_fn(Shape::d4(1, 8, 8, 8), |i| {
            (i as f64 * 0.013).sin()
        }));
        let vars = model.register(&mut tape);
        let (f_t, f_hat) = model.subtraction_forward(&mut tape, &vars, f, f).unwrap();
        assert!(tape.value(f_t).data().iter().all(|v| v.abs() < 1e-12));
        assert!(tape.value(f_hat).bit_eq(tape.value(f)));
    }
}
