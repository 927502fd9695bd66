//! Detection metrics: pixel-level IoU/nIoU, object-level Pd/Fa with
//! centroid matching, ROC sweep and AUC.
//!
//! Conventions: IoU pools TP/T/P counts over the whole set; nIoU averages
//! per-sample IoU. A ground-truth target counts as detected when some
//! predicted component centroid lies within `d_max` pixels of its centroid,
//! each predicted component matching at most one target. Fa is the pixel
//! count of unmatched predicted components divided by total pixels,
//! reported in 1e-6 units.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::tensor::Tensor;

/// Default centroid matching radius in pixels.
pub const DEFAULT_D_MAX: f64 = 3.0;

/// Binary image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(h: usize, w: usize) -> Self {
        Mask {
            h,
            w,
            data: vec![false; h * w],
        }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        Mask { h, w, data }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }
}

/// mask = confidence > tau.
pub fn binarize(confidence: &Tensor<f64>, tau: f64) -> Mask {
    let dims = confidence.shape();
    let (h, w) = match dims.rank() {
        2 => (dims.dim(0), dims.dim(1)),
        4 => (dims.dim(2), dims.dim(3)),
        _ => panic!("binarize: expected rank-2 or rank-4 confidence, got {dims}"),
    };
    Mask {
        h,
        w,
        data: confidence.data().iter().map(|&v| v > tau).collect(),
    }
}

/// A connected region of foreground pixels.
#[derive(Clone, Debug)]
pub struct Component {
    /// Row-major index of the first pixel encountered; components are
    /// emitted in increasing order of this anchor.
    pub anchor: usize,
    pub pixels: usize,
    pub centroid: (f64, f64), // (y, x)
}

/// 8-connectivity labeling with deterministic component order.
pub fn connected_components(mask: &Mask) -> Vec<Component> {
    let (h, w) = (mask.h, mask.w);
    if h == 0 || w == 0 {
        return Vec::new();
    }
    let mut seen = vec![false; h * w];
    let mut components = Vec::new();
    let mut stack = Vec::new();

    for start in 0..h * w {
        if !mask.data[start] || seen[start] {
            continue;
        }
        let mut pixels = 0usize;
        let mut sum_y = 0f64;
        let mut sum_x = 0f64;
        seen[start] = true;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let (y, x) = (idx / w, idx % w);
            pixels += 1;
            sum_y += y as f64;
            sum_x += x as f64;
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let nidx = ny * w + nx;
                    if mask.data[nidx] && !seen[nidx] {
                        seen[nidx] = true;
                        stack.push(nidx);
                    }
                }
            }
        }
        components.push(Component {
            anchor: start,
            pixels,
            centroid: (sum_y / pixels as f64, sum_x / pixels as f64),
        });
    }
    components
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PixelCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PixelMetrics {
    /// Pooled intersection-over-union over the whole set.
    pub iou: f64,
    /// Mean of per-sample IoU.
    pub niou: f64,
    pub counts: PixelCounts,
}

fn sample_counts(pred: &Mask, gt: &Mask) -> PixelCounts {
    debug_assert_eq!((pred.h, pred.w), (gt.h, gt.w));
    let mut c = PixelCounts::default();
    for (&p, &t) in pred.data.iter().zip(&gt.data) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

fn sample_iou(c: &PixelCounts) -> f64 {
    let denom = c.tp + c.fp + c.fn_; // T + P - TP
    if denom == 0 {
        // both masks empty: perfect agreement
        1.0
    } else {
        c.tp as f64 / denom as f64
    }
}

/// Pooled IoU and per-sample-averaged nIoU over matched mask pairs.
pub fn pixel_metrics(preds: &[Mask], gts: &[Mask]) -> Result<PixelMetrics> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(crate::invalid_arg!(
            "pixel_metrics: need equal non-empty mask sets, got {} vs {}",
            preds.len(),
            gts.len()
        ));
    }
    let mut pooled = PixelCounts::default();
    let mut niou_sum = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        if (p.h, p.w) != (g.h, g.w) {
            return Err(crate::invalid_arg!(
                "pixel_metrics: mask sizes differ ({}x{} vs {}x{})",
                p.h,
                p.w,
                g.h,
                g.w
            ));
        }
        let c = sample_counts(p, g);
        niou_sum += sample_iou(&c);
        pooled.tp += c.tp;
        pooled.fp += c.fp;
        pooled.fn_ += c.fn_;
        pooled.tn += c.tn;
    }
    Ok(PixelMetrics {
        iou: sample_iou(&pooled),
        niou: niou_sum / preds.len() as f64,
        counts: pooled,
    })
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ObjectMetrics {
    pub pd: f64,
    /// False-alarm rate in 1e-6 per-pixel units.
    pub fa: f64,
    pub detected: usize,
    pub total_targets: usize,
    pub false_alarm_pixels: u64,
    pub total_pixels: u64,
}

/// Centroid-distance matching of predicted components to ground-truth
/// targets.
pub fn object_metrics(preds: &[Mask], gts: &[Mask], d_max: f64) -> Result<ObjectMetrics> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(crate::invalid_arg!(
            "object_metrics: need equal non-empty mask sets, got {} vs {}",
            preds.len(),
            gts.len()
        ));
    }
    let mut detected = 0usize;
    let mut total = 0usize;
    let mut fa_pixels = 0u64;
    let mut total_pixels = 0u64;

    for (p, g) in preds.iter().zip(gts) {
        total_pixels += (p.h * p.w) as u64;
        let pred_comps = connected_components(p);
        let gt_comps = connected_components(g);
        total += gt_comps.len();

        let mut used = vec![false; pred_comps.len()];
        for gc in &gt_comps {
            // nearest unmatched predicted centroid within d_max; anchor
            // order breaks ties deterministically
            let mut best: Option<(usize, f64)> = None;
            for (i, pc) in pred_comps.iter().enumerate() {
                if used[i] {
                    continue;
                }
                let dy = pc.centroid.0 - gc.centroid.0;
                let dx = pc.centroid.1 - gc.centroid.1;
                let d = num_traits::Float::sqrt(dy * dy + dx * dx);
                if d <= d_max && best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
            if let Some((i, _)) = best {
                used[i] = true;
                detected += 1;
            }
        }
        for (i, pc) in pred_comps.iter().enumerate() {
            if !used[i] {
                fa_pixels += pc.pixels as u64;
            }
        }
    }

    let pd = if total == 0 {
        1.0
    } else {
        detected as f64 / total as f64
    };
    Ok(ObjectMetrics {
        pd,
        fa: fa_pixels as f64 / total_pixels as f64 * 1e6,
        detected,
        total_targets: total,
        false_alarm_pixels: fa_pixels,
        total_pixels,
    })
}

/// One operating point of the ROC sweep. `fa` is in 1e-6 units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub tau: f64,
    pub fa: f64,
    pub pd: f64,
}

/// Sweep thresholds (strictly decreasing, within [0,1]) over a set of
/// confidence maps, computing object-level (Fa, Pd) per threshold, then the
/// area under the Pd-vs-Fa curve with the Fa axis normalized to the largest
/// observed value.
pub fn roc_auc(
    confidences: &[Tensor<f64>],
    gts: &[Mask],
    thresholds: &[f64],
    d_max: f64,
) -> Result<(Vec<RocPoint>, f64)> {
    if thresholds.len() < 2 {
        return Err(crate::invalid_arg!(
            "roc_auc: need at least 2 thresholds, got {}",
            thresholds.len()
        ));
    }
    for pair in thresholds.windows(2) {
        if pair[1] >= pair[0] {
            return Err(crate::invalid_arg!(
                "roc_auc: thresholds must be strictly decreasing"
            ));
        }
    }
    if thresholds.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
        return Err(crate::invalid_arg!("roc_auc: thresholds must lie in [0,1]"));
    }

    let mut points = Vec::with_capacity(thresholds.len());
    for &tau in thresholds {
        let preds: Vec<Mask> = confidences.iter().map(|c| binarize(c, tau)).collect();
        let om = object_metrics(&preds, gts, d_max)?;
        points.push(RocPoint {
            tau,
            fa: om.fa,
            pd: om.pd,
        });
    }
    let auc = auc_from_points(&points);
    Ok((points, auc))
}

/// Trapezoid area under (Fa, Pd) after clipping/normalizing the Fa axis to
/// the maximum observed value. Degenerate sweeps are padded with (0,0) and
/// (1, max Pd) endpoints.
pub fn auc_from_points(points: &[RocPoint]) -> f64 {
    let fa_max = points.iter().fold(0.0f64, |m, p| m.max(p.fa));
    let pd_max = points.iter().fold(0.0f64, |m, p| m.max(p.pd));
    let mut xy: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (if fa_max > 0.0 { p.fa / fa_max } else { 0.0 }, p.pd))
        .collect();
    xy.push((0.0, 0.0));
    xy.push((1.0, pd_max));
    xy.sort_by(|a, b| a.partial_cmp(b).expect("finite roc points"));
    let mut auc = 0.0;
    for pair in xy.windows(2) {
        let (x0, y0) = pair[0];
        let (x1, y1) = pair[1];
        auc += (x1 - x0) * (y0 + y1) * 0.5;
    }
    auc
}

/// Full evaluation report for a prediction set.
#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub iou: f64,
    pub niou: f64,
    pub pd: f64,
    /// 1e-6 per-pixel units.
    pub fa: f64,
    pub counts: PixelCounts,
    pub detected: usize,
    pub total_targets: usize,
    pub roc: Vec<RocPoint>,
    pub auc: f64,
}

/// Evenly spaced threshold grid 1.0, ..., 0.0 (descending), 101 points.
pub fn default_thresholds() -> Vec<f64> {
    (0..=100).map(|i| (100 - i) as f64 / 100.0).collect()
}

/// Binarize at `tau`, compute pixel and object metrics plus a ROC sweep.
pub fn evaluate_set(
    confidences: &[Tensor<f64>],
    gts: &[Mask],
    tau: f64,
    d_max: f64,
    thresholds: &[f64],
) -> Result<MetricsReport> {
    if confidences.len() != gts.len() || confidences.is_empty() {
        return Err(crate::invalid_arg!(
            "evaluate_set: need equal non-empty sets, got {} confidences vs {} masks",
            confidences.len(),
            gts.len()
        ));
    }
    let preds: Vec<Mask> = confidences.iter().map(|c| binarize(c, tau)).collect();
    let pm = pixel_metrics(&preds, gts)?;
    let om = object_metrics(&preds, gts, d_max)?;
    let (roc, auc) = roc_auc(confidences, gts, thresholds, d_max)?;
    Ok(MetricsReport {
        iou: pm.iou,
        niou: pm.niou,
        pd: om.pd,
        fa: om.fa,
        counts: pm.counts,
        detected: om.detected,
        total_targets: om.total_targets,
        roc,
        auc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use crate::tensor::Shape;

    fn mask_from(bits: &[u8], h: usize, w: usize) -> Mask {
        Mask {
            h,
            w,
            data: bits.iter().map(|&b| b != 0).collect(),
        }
    }

    #[test]
    fn binarize_thresholds_and_monotonicity() {
        let conf = Tensor::full(Shape::d2(3, 3), 0.4);
        assert_eq!(binarize(&conf, 0.5).count(), 0);
        assert_eq!(binarize(&conf, 0.0).count(), 9);

        let mut rng = Stream::seed(1);
        let conf = Tensor::from_fn(Shape::d2(8, 8), |_| rng.uniform());
        let lo = binarize(&conf, 0.3);
        let hi = binarize(&conf, 0.7);
        // mask at the higher threshold is a subset
        for (a, b) in hi.data.iter().zip(&lo.data) {
            assert!(!a | b);
        }
    }

    #[test]
    fn two_squares_are_two_components() {
        let m = Mask::from_fn(8, 8, |y, x| {
            (y < 2 && x < 2) || ((4..6).contains(&y) && (4..6).contains(&x))
        });
        let comps = connected_components(&m);
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0].pixels, 4);
        assert_eq!(comps[0].centroid, (0.5, 0.5));
        assert_eq!(comps[1].centroid, (4.5, 4.5));
    }

    #[test]
    fn diagonal_pixels_join_under_8_connectivity() {
        let m = mask_from(&[1, 0, 0, 0, 1, 0, 0, 0, 1], 3, 3);
        assert_eq!(connected_components(&m).len(), 1);
    }

    /// Brute-force reference labeling: repeated dilation from each seed,
    /// independent of the scan-order implementation.
    fn flood_fill_components(mask: &Mask) -> Vec<usize> {
        let mut remaining = mask.data.clone();
        let mut sizes = Vec::new();
        loop {
            let Some(seed) = remaining.iter().position(|&b| b) else {
                break;
            };
            let mut region = vec![false; remaining.len()];
            region[seed] = true;
            loop {
                let mut grew = false;
                for y in 0..mask.h {
                    for x in 0..mask.w {
                        let idx = y * mask.w + x;
                        if region[idx] || !remaining[idx] {
                            continue;
                        }
                        'scan: for ny in y.saturating_sub(1)..=(y + 1).min(mask.h - 1) {
                            for nx in x.saturating_sub(1)..=(x + 1).min(mask.w - 1) {
                                if region[ny * mask.w + nx] {
                                    region[idx] = true;
                                    grew = true;
                                    break 'scan;
                                }
                            }
                        }
                    }
                }
                if !grew {
                    break;
                }
            }
            let mut size = 0;
            for (r, m) in region.iter().zip(remaining.iter_mut()) {
                if *r {
                    *m = false;
                    size += 1;
                }
            }
            sizes.push(size);
        }
        sizes.sort_unstable();
        sizes
    }

    #[test]
    fn labeling_matches_flood_fill_oracle_on_random_masks() {
        let mut rng = Stream::seed(99);
        for _ in 0..20 {
            let m = Mask::from_fn(16, 16, |_, _| rng.uniform() < 0.35);
            let mut got: Vec<usize> = connected_components(&m).iter().map(|c| c.pixels).collect();
            got.sort_unstable();
            assert_eq!(got, flood_fill_components(&m));
        }
    }

    #[test]
    fn pixel_metrics_perfect_masks() {
        let g = Mask::from_fn(4, 4, |y, x| y == x);
        let pm = pixel_metrics(&[g.clone(), g.clone()], &[g.clone(), g]).unwrap();
        assert_eq!(pm.iou, 1.0);
        assert_eq!(pm.niou, 1.0);
    }

    #[test]
    fn pixel_metrics_hand_counted_case() {
        // TP=2, T=3, P=3 -> IoU = 2/4
        let gt = mask_from(&[1, 1, 1, 0, 0, 0, 0, 0, 0], 3, 3);
        let pred = mask_from(&[1, 1, 0, 1, 0, 0, 0, 0, 0], 3, 3);
        let pm = pixel_metrics(&[pred], &[gt]).unwrap();
        assert_eq!(pm.iou, 0.5);
        assert_eq!(pm.niou, 0.5);
        assert_eq!(
            pm.counts,
            PixelCounts {
                tp: 2,
                fp: 1,
                fn_: 1,
                tn: 5
            }
        );
    }

    #[test]
    fn niou_averages_and_iou_pools() {
        // sample A: exact match of 2 pixels; sample B: disjoint (1 gt, 1 pred)
        let gt_a = mask_from(&[1, 1, 0, 0], 2, 2);
        let pr_a = gt_a.clone();
        let gt_b = mask_from(&[1, 0, 0, 0], 2, 2);
        let pr_b = mask_from(&[0, 0, 0, 1], 2, 2);
        let pm = pixel_metrics(&[pr_a, pr_b], &[gt_a, gt_b]).unwrap();
        assert_eq!(pm.niou, 0.5);
        // pooled: TP=2, T=3, P=3 -> 2/4
        assert_eq!(pm.iou, 0.5);
    }

    #[test]
    fn pixel_metrics_rejects_empty_set() {
        assert!(pixel_metrics(&[], &[]).is_err());
    }

    #[test]
    fn niou_equals_iou_for_single_sample() {
        let mut rng = Stream::seed(5);
        for _ in 0..10 {
            let pred = Mask::from_fn(6, 6, |_, _| rng.uniform() < 0.4);
            let gt = Mask::from_fn(6, 6, |_, _| rng.uniform() < 0.4);
            let pm = pixel_metrics(&[pred], &[gt]).unwrap();
            assert_eq!(pm.iou, pm.niou);
        }
    }

    #[test]
    fn object_metrics_perfect_and_partial() {
        let gt = Mask::from_fn(16, 16, |y, x| (y < 2 && x < 2) || (y > 12 && x > 12));
        let om = object_metrics(&[gt.clone()], &[gt.clone()], DEFAULT_D_MAX).unwrap();
        assert_eq!(om.pd, 1.0);
        assert_eq!(om.fa, 0.0);

        // only the first of two targets predicted -> pd = 0.5
        let pred = Mask::from_fn(16, 16, |y, x| y < 2 && x < 2);
        let om = object_metrics(&[pred], &[gt], DEFAULT_D_MAX).unwrap();
        assert_eq!(om.pd, 0.5);
        assert_eq!(om.fa, 0.0);
    }

    #[test]
    fn unmatched_blob_pixels_count_as_false_alarms() {
        // 5-pixel blob far from the single gt target in a 256x256 image
        let gt = Mask::from_fn(256, 256, |y, x| y < 2 && x < 2);
        let pred = Mask::from_fn(256, 256, |y, x| {
            (y < 2 && x < 2) || (y == 128 && (100..105).contains(&x))
        });
        let om = object_metrics(&[pred], &[gt], DEFAULT_D_MAX).unwrap();
        assert_eq!(om.pd, 1.0);
        assert_eq!(om.false_alarm_pixels, 5);
        let expected_fa = 5.0 / 65536.0 * 1e6;
        assert!((om.fa - expected_fa).abs() < 1e-9);
        assert!((om.fa - 76.29).abs() < 0.01);
    }

    #[test]
    fn matched_component_is_consumed() {
        // two gt targets close together, one predicted blob between them:
        // only one may match
        let gt = Mask::from_fn(16, 16, |y, x| (y == 4 && x == 4) || (y == 4 && x == 8));
        let pred = Mask::from_fn(16, 16, |y, x| y == 4 && x == 6);
        let om = object_metrics(&[pred], &[gt], 3.0).unwrap();
        assert_eq!(om.detected, 1);
        assert_eq!(om.total_targets, 2);
    }

    #[test]
    fn oracle_confidence_gives_unit_auc() {
        let gt = Mask::from_fn(32, 32, |y, x| (15..17).contains(&y) && (15..17).contains(&x));
        let conf = Tensor::from_fn(Shape::d2(32, 32), |i| {
            let (y, x) = (i / 32, i % 32);
            if gt.get(y, x) {
                1.0
            } else {
                0.0
            }
        });
        let taus = default_thresholds();
        let (points, auc) = roc_auc(&[conf], &[gt], &taus, DEFAULT_D_MAX).unwrap();
        assert_eq!(points.len(), 101);
        assert!(auc > 0.99, "auc {auc}");
    }

    #[test]
    fn constant_confidence_degenerates_to_two_operating_points() {
        let gt = Mask::from_fn(16, 16, |y, x| y == 2 && x == 12);
        let conf = Tensor::full(Shape::d2(16, 16), 0.5);
        let (points, auc) = roc_auc(&[conf], &[gt], &default_thresholds(), DEFAULT_D_MAX).unwrap();
        // the sweep collapses to empty-mask and full-mask operating points;
        // endpoint padding keeps the area well-defined
        let distinct: alloc::collections::BTreeSet<(u64, u64)> = points
            .iter()
            .map(|p| (p.fa.to_bits(), p.pd.to_bits()))
            .collect();
        assert!(distinct.len() <= 2, "{distinct:?}");
        assert!(auc.is_finite());
        // the full-image blob centroid is far from the off-center target,
        // so this degenerate detector earns no area
        assert_eq!(auc, 0.0);
    }

    #[test]
    fn random_confidence_auc_is_chance_level() {
        let mut rng = Stream::seed(7);
        let mut aucs = Vec::new();
        for _ in 0..20 {
            let cy = 4 + rng.below(16);
            let cx = 4 + rng.below(16);
            let gt = Mask::from_fn(24, 24, |y, x| {
                (y as i64 - cy as i64).abs() <= 1 && (x as i64 - cx as i64).abs() <= 1
            });
            let conf = Tensor::from_fn(Shape::d2(24, 24), |_| rng.uniform());
            let (_, auc) = roc_auc(&[conf], &[gt], &default_thresholds(), DEFAULT_D_MAX).unwrap();
            aucs.push(auc);
        }
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        assert!((0.3..0.7).contains(&mean), "mean auc {mean}");
    }

    #[test]
    fn roc_rejects_bad_threshold_grids() {
        let gt = Mask::new(4, 4);
        let conf = Tensor::full(Shape::d2(4, 4), 0.5);
        assert!(roc_auc(&[conf.clone()], &[gt.clone()], &[0.5], DEFAULT_D_MAX).is_err());
        assert!(roc_auc(&[conf.clone()], &[gt.clone()], &[0.2, 0.8], DEFAULT_D_MAX).is_err());
        assert!(roc_auc(&[conf], &[gt], &[1.5, 0.5], DEFAULT_D_MAX).is_err());
    }

    #[test]
    fn pd_and_fa_are_monotone_in_tau_for_blob_shaped_maps() {
        // Blob-shaped confidence (the regime detector outputs live in):
        // components shrink concentrically as tau rises, so both rates are
        // monotone.
        let gt = Mask::from_fn(32, 32, |y, x| (8..11).contains(&y) && (8..11).contains(&x));
        let conf = Tensor::from_fn(Shape::d2(32, 32), |i| {
            let (y, x) = ((i / 32) as f64, (i % 32) as f64);
            let main = (-((y - 9.0).powi(2) + (x - 9.0).powi(2)) / 4.0).exp();
            let clutter = 0.6 * (-((y - 24.0).powi(2) + (x - 20.0).powi(2)) / 9.0).exp();
            let v = main.max(clutter);
            // hard-zero floor, as detector outputs have
            if v < 1e-4 {
                0.0
            } else {
                v
            }
        });
        let (points, _) = roc_auc(&[conf], &[gt], &default_thresholds(), DEFAULT_D_MAX).unwrap();
        let mut last_fa = f64::INFINITY;
        let mut last_pd = f64::INFINITY;
        for p in points.iter().rev() {
            // ascending tau: both rates may only fall
            assert!(p.fa <= last_fa + 1e-12, "fa rose at tau {}", p.tau);
            assert!(p.pd <= last_pd + 1e-12, "pd rose at tau {}", p.tau);
            last_fa = p.fa;
            last_pd = p.pd;
        }
        // the sweep actually exercises both regimes
        assert!(points.iter().any(|p| p.fa > 0.0));
        assert!(points.iter().any(|p| p.pd == 1.0));
    }

    #[test]
    fn exhaustive_3x3_masks_match_counting_oracle() {
        let gt_bits: u16 = 0b1_0100_1101;
        let gt = Mask::from_fn(3, 3, |y, x| gt_bits >> (y * 3 + x) & 1 == 1);
        for bits in 0u16..512 {
            let pred = Mask::from_fn(3, 3, |y, x| bits >> (y * 3 + x) & 1 == 1);
            let pm = pixel_metrics(&[pred.clone()], &[gt.clone()]).unwrap();
            // oracle: direct counting
            let mut tp = 0u64;
            let mut t = 0u64;
            let mut p = 0u64;
            for i in 0..9 {
                let pv = bits >> i & 1 == 1;
                let tv = gt_bits >> i & 1 == 1;
                if pv {
                    p += 1;
                }
                if tv {
                    t += 1;
                }
                if pv && tv {
                    tp += 1;
                }
            }
            let want = if t + p == tp {
                1.0
            } else {
                tp as f64 / (t + p - tp) as f64
            };
            assert_eq!(pm.iou, want, "pred bits {bits:#b}");
        }
    }
}
