//! Segmentation and fusion objectives with analytic gradients.
//!
//! * focal: `α (1 − p_t)^γ · (−log p_t)` averaged over pixels, gradient w.r.t. logits;
//! * soft IoU: `1 − mean_c I_c / (S_c − I_c + ε)` over classes present in the
//!   target or predicted by argmax, gradient w.r.t. probabilities;
//! * fusion: weighted L1 to both sources plus an L1 on Sobel responses against
//!   the stronger source gradient, subgradient w.r.t. the fused pixels;
//! * `seg = focal + iou`, `total = seg + 0.1 · fus`.

mod gradcheck;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport, GRADCHECK_TOLERANCE, REL_FLOOR};

/// Floor on `p_t` inside the focal logarithm.
pub const PROB_FLOOR: f64 = 1e-12;
pub const DEFAULT_IOU_EPS: f64 = 1e-6;
pub const FUSION_WEIGHT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams { alpha: 0.25, gamma: 2.0 }
    }
}

impl FocalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) || !(self.gamma >= 0.0) {
            return Err(Error::Config(format!(
                "focal parameters need alpha in (0, 1] and gamma >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionLossWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
}

impl Default for FusionLossWeights {
    fn default() -> Self {
        FusionLossWeights {
            beta1: 0.5,
            beta2: 0.5,
            beta3: 1.0,
        }
    }
}

impl FusionLossWeights {
    pub fn new(beta1: f64, beta2: f64, beta3: f64) -> Result<Self> {
        let w = FusionLossWeights { beta1, beta2, beta3 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.beta1, self.beta2, self.beta3].iter().all(|b| *b >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("fusion weights must be nonnegative, got {self:?}")))
        }
    }
}

/// A scalar loss and its gradient w.r.t. the prediction it was given.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub focal: f64,
    pub iou: f64,
    pub seg: f64,
    pub fus: f64,
    pub total: f64,
    /// Gradients keyed by loss name (`focal`, `iou`, `fus`); not serialized.
    #[serde(skip)]
    pub gradients: BTreeMap<String, Tensor>,
}

/// Validates an `[H, W]` class-id map against `k` classes.
pub fn class_ids(target: &Tensor, k: usize) -> Result<Vec<usize>> {
    if target.rank() != 2 {
        return Err(Error::dim(format!("class map must be [H, W], got {:?}", target.shape())));
    }
    target
        .data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && (v as usize) < k {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("class id {v} outside 0..{k}")))
            }
        })
        .collect()
}

fn check_class_volume(pred: &Tensor, target: &Tensor, what: &str) -> Result<(usize, usize)> {
    if pred.rank() != 3 || target.rank() != 2 || pred.shape()[1..] != *target.shape() {
        return Err(Error::dim(format!(
            "{what} {:?} does not match class map {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok((pred.dim(0), target.len()))
}

/// Focal loss over softmax of `[K, H, W]` logits.
pub fn focal_loss(logits: &Tensor, target: &Tensor, params: FocalParams) -> Result<LossValue> {
    params.validate()?;
    let (k, p) = check_class_volume(logits, target, "logits")?;
    let ids = class_ids(target, k)?;
    let FocalParams { alpha, gamma } = params;
    let z = logits.data();
    let log_floor = PROB_FLOOR.ln();
    let mut grad = vec![0.0; z.len()];
    let mut total = 0.0;
    let mut probs = vec![0.0; k];
    for (pix, &t) in ids.iter().enumerate() {
        let zmax = (0..k).map(|c| z[c * p + pix]).fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for c in 0..k {
            probs[c] = (z[c * p + pix] - zmax).exp();
            denom += probs[c];
        }
        probs.iter_mut().for_each(|q| *q /= denom);
        let raw_log_pt = z[t * p + pix] - zmax - denom.ln();
        let clamped = raw_log_pt < log_floor;
        let log_pt = raw_log_pt.max(log_floor);
        let pt = probs[t];
        let one_minus = 1.0 - pt;
        let modulator = if gamma == 0.0 { 1.0 } else { one_minus.powf(gamma) };
        total += alpha * modulator * (-log_pt);

        // d/dz_j = α (δ_jt − p_j) [γ (1−p_t)^{γ−1} p_t log p_t − (1−p_t)^γ]
        let focus = if gamma == 0.0 || one_minus == 0.0 {
            0.0
        } else {
            gamma * one_minus.powf(gamma - 1.0) * pt * log_pt
        };
        let ce = if clamped { 0.0 } else { modulator };
        let common = alpha * (focus - ce) / p as f64;
        for c in 0..k {
            let delta = if c == t { 1.0 } else { 0.0 };
            grad[c * p + pix] = common * (delta - probs[c]);
        }
    }
    Ok(LossValue {
        value: total / p as f64,
        grad: Tensor::from_vec(logits.shape(), grad)?,
    })
}

/// Classes present in the target or winning the per-pixel argmax.
fn iou_classes(probs: &Tensor, ids: &[usize]) -> Vec<bool> {
    let k = probs.dim(0);
    let p = ids.len();
    let d = probs.data();
    let mut used = vec![false; k];
    for (pix, &t) in ids.iter().enumerate() {
        used[t] = true;
        let best = (0..k).fold(0, |b, c| if d[c * p + pix] > d[b * p + pix] { c } else { b });
        used[best] = true;
    }
    used
}

/// Soft IoU loss over `[K, H, W]` class probabilities.
pub fn iou_loss(probs: &Tensor, target: &Tensor, eps: f64) -> Result<LossValue> {
    let (k, p) = check_class_volume(probs, target, "probabilities")?;
    let ids = class_ids(target, k)?;
    let used = iou_classes(probs, &ids);
    let n_used = used.iter().filter(|&&u| u).count() as f64;
    let d = probs.data();
    let mut grad = vec![0.0; d.len()];
    let mut sum_iou = 0.0;
    for c in (0..k).filter(|&c| used[c]) {
        let plane = &d[c * p..(c + 1) * p];
        let (mut inter, mut total) = (0.0, 0.0);
        for (pix, &q) in plane.iter().enumerate() {
            let y = if ids[pix] == c { 1.0 } else { 0.0 };
            inter += y * q;
            total += y + q;
        }
        let union = total - inter + eps;
        sum_iou += inter / union;
        for (pix, g) in grad[c * p..(c + 1) * p].iter_mut().enumerate() {
            let y = if ids[pix] == c { 1.0 } else { 0.0 };
            *g = -(y * union - inter * (1.0 - y)) / (union * union) / n_used;
        }
    }
    Ok(LossValue {
        value: 1.0 - sum_iou / n_used,
        grad: Tensor::from_vec(probs.shape(), grad)?,
    })
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Sobel response (correlation, zero padding) of an `h × w` plane.
pub fn sobel(plane: &[f64], h: usize, w: usize, vertical: bool) -> Vec<f64> {
    let k = if vertical { &SOBEL_Y } else { &SOBEL_X };
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (di, row) in k.iter().enumerate() {
                for (dj, &kv) in row.iter().enumerate() {
                    let (y, x) = ((i + di) as isize - 1, (j + dj) as isize - 1);
                    if kv != 0.0 && y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                        acc += kv * plane[y as usize * w + x as usize];
                    }
                }
            }
            out[i * w + j] = acc;
        }
    }
    out
}

/// Adjoint of [`sobel`]: scatters `seed` back through the same stencil.
fn sobel_adjoint(seed: &[f64], h: usize, w: usize, vertical: bool) -> Vec<f64> {
    let k = if vertical { &SOBEL_Y } else { &SOBEL_X };
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let s = seed[i * w + j];
            if s == 0.0 {
                continue;
            }
            for (di, row) in k.iter().enumerate() {
                for (dj, &kv) in row.iter().enumerate() {
                    let (y, x) = ((i + di) as isize - 1, (j + dj) as isize - 1);
                    if kv != 0.0 && y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                        out[y as usize * w + x as usize] += kv * s;
                    }
                }
            }
        }
    }
    out
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn plane_dims(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [h, w] | [1, h, w] => Ok((*h, *w)),
        s => Err(Error::dim(format!("expected a single-channel image, got {s:?}"))),
    }
}

/// Per-pixel, per-axis gradient target: the source response with the larger
/// magnitude (ties go to the visible image).
pub fn gradient_target(rgb: &Tensor, ir: &Tensor) -> Result<[Vec<f64>; 2]> {
    let (h, w) = plane_dims(rgb)?;
    if plane_dims(ir)? != (h, w) {
        return Err(Error::dim("fusion sources differ in size"));
    }
    let pick = |vertical| {
        let a = sobel(rgb.data(), h, w, vertical);
        let b = sobel(ir.data(), h, w, vertical);
        a.into_iter()
            .zip(b)
            .map(|(a, b)| if a.abs() >= b.abs() { a } else { b })
            .collect::<Vec<_>>()
    };
    Ok([pick(false), pick(true)])
}

/// Residuals whose sign flips make the fusion loss non-smooth, per pixel
/// and term: `[F − A, F − B, ∇x F − Tx, ∇y F − Ty]`.
pub fn fusion_residuals(fused: &Tensor, rgb: &Tensor, ir: &Tensor) -> Result<[Vec<f64>; 4]> {
    let (h, w) = plane_dims(fused)?;
    if plane_dims(rgb)? != (h, w) {
        return Err(Error::dim("fused image and sources differ in size"));
    }
    let [tx, ty] = gradient_target(rgb, ir)?;
    let f = fused.data();
    let diff = |src: &[f64]| f.iter().zip(src).map(|(a, b)| a - b).collect::<Vec<_>>();
    let gx = sobel(f, h, w, false);
    let gy = sobel(f, h, w, true);
    Ok([diff(rgb.data()), diff(ir.data()), diff_vec(&gx, &tx), diff_vec(&gy, &ty)])
}

fn diff_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Smallest residual magnitude that a perturbation of pixel `index` can move.
pub fn fusion_kink_distance(fused: &Tensor, rgb: &Tensor, ir: &Tensor, index: usize) -> f64 {
    let Ok((h, w)) = plane_dims(fused) else { return 0.0 };
    let Ok(res) = fusion_residuals(fused, rgb, ir) else { return 0.0 };
    let (i, j) = (index / w, index % w);
    let mut d = res[0][index].abs().min(res[1][index].abs());
    for y in i.saturating_sub(1)..(i + 2).min(h) {
        for x in j.saturating_sub(1)..(j + 2).min(w) {
            d = d.min(res[2][y * w + x].abs()).min(res[3][y * w + x].abs());
        }
    }
    d
}

/// Fusion loss on single-channel images (`[H, W]` or `[1, H, W]`).
pub fn fusion_loss(fused: &Tensor, rgb: &Tensor, ir: &Tensor, w: FusionLossWeights) -> Result<LossValue> {
    w.validate()?;
    let (h, wd) = plane_dims(fused)?;
    if plane_dims(ir)? != (h, wd) {
        return Err(Error::dim("fused image and sources differ in size"));
    }
    let n = (h * wd) as f64;
    let [ra, rb, rx, ry] = fusion_residuals(fused, rgb, ir)?;
    let l1 = |r: &[f64]| r.iter().map(|v| v.abs()).sum::<f64>() / n;
    let value = w.beta1 * l1(&ra) + w.beta2 * l1(&rb) + w.beta3 * (l1(&rx) + l1(&ry));

    let sx: Vec<f64> = rx.iter().map(|&v| sign(v)).collect();
    let sy: Vec<f64> = ry.iter().map(|&v| sign(v)).collect();
    let ax = sobel_adjoint(&sx, h, wd, false);
    let ay = sobel_adjoint(&sy, h, wd, true);
    let grad: Vec<f64> = (0..h * wd)
        .map(|i| {
            (w.beta1 * sign(ra[i]) + w.beta2 * sign(rb[i]) + w.beta3 * (ax[i] + ay[i])) / n
        })
        .collect();
    Ok(LossValue {
        value,
        grad: Tensor::from_vec(fused.shape(), grad)?,
    })
}

/// Combines the parts: `seg = focal + iou`, `total = seg + 0.1 · fus`.
pub fn total_loss(focal: f64, iou: f64, fus: f64) -> LossReport {
    let seg = focal + iou;
    LossReport {
        focal,
        iou,
        seg,
        fus,
        total: seg + FUSION_WEIGHT * fus,
        gradients: BTreeMap::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_target(seed: u64, k: usize, h: usize, w: usize) -> Tensor {
        let mut rng = Rng::new(seed, 9);
        Tensor::from_fn(&[h, w], |_| rng.below(k) as f64)
    }

    #[test]
    fn focal_without_focusing_is_cross_entropy() {
        let logits = Rng::new(1, 0).uniform_tensor(&[4, 5, 6], -3.0, 3.0);
        let target = random_target(1, 4, 5, 6);
        let f = focal_loss(&logits, &target, FocalParams { alpha: 1.0, gamma: 0.0 }).unwrap();
        // Independent cross-entropy via log-sum-exp per pixel.
        let mut ce = 0.0;
        for i in 0..5 {
            for j in 0..6 {
                let zs: Vec<f64> = (0..4).map(|c| logits.at(&[c, i, j])).collect();
                let lse = zs.iter().map(|z| z.exp()).sum::<f64>().ln();
                ce += lse - zs[target.at(&[i, j]) as usize];
            }
        }
        assert!((f.value - ce / 30.0).abs() < 1e-12);
    }

    #[test]
    fn focal_two_class_tie_by_hand() {
        let logits = Tensor::zeros(&[2, 1, 1]);
        let target = Tensor::zeros(&[1, 1]);
        for (alpha, gamma) in [(0.25, 2.0), (1.0, 0.0), (0.5, 1.5)] {
            let f = focal_loss(&logits, &target, FocalParams { alpha, gamma }).unwrap();
            let expect = alpha * 0.5f64.powf(gamma) * std::f64::consts::LN_2;
            assert!((f.value - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn confident_correct_focal_vanishes() {
        let mut logits = Tensor::zeros(&[3, 2, 2]);
        for i in 0..2 {
            for j in 0..2 {
                logits.set(&[1, i, j], 60.0);
            }
        }
        let f = focal_loss(&logits, &Tensor::ones(&[2, 2]), FocalParams::default()).unwrap();
        assert!(f.value < 1e-20);
    }

    #[test]
    fn focal_rejects_bad_params_and_ids() {
        let l = Tensor::zeros(&[2, 1, 1]);
        let t = Tensor::zeros(&[1, 1]);
        assert!(focal_loss(&l, &t, FocalParams { alpha: 0.0, gamma: 1.0 }).is_err());
        assert!(focal_loss(&l, &t, FocalParams { alpha: 0.5, gamma: -1.0 }).is_err());
        assert!(focal_loss(&l, &Tensor::full(&[1, 1], 2.0), FocalParams::default()).is_err());
    }

    fn one_hot(target: &Tensor, k: usize) -> Tensor {
        let (h, w) = (target.dim(0), target.dim(1));
        Tensor::from_fn(&[k, h, w], |i| (target.at(&[i[1], i[2]]) as usize == i[0]) as u8 as f64)
    }

    #[test]
    fn perfect_probabilities_give_near_zero_iou_loss() {
        let target = random_target(2, 5, 8, 8);
        let l = iou_loss(&one_hot(&target, 5), &target, DEFAULT_IOU_EPS).unwrap();
        assert!(l.value >= 0.0 && l.value < 1e-5);
    }

    #[test]
    fn iou_hand_cases() {
        // 2x2 single class at 0.5 everywhere: I = 2, S = 4 + 2.
        let target = Tensor::zeros(&[2, 2]);
        let l = iou_loss(&Tensor::full(&[1, 2, 2], 0.5), &target, 0.0).unwrap();
        assert!((l.value - 0.5).abs() < 1e-15);
        // A present class with zero probability contributes IoU 0.
        let probs = Tensor::from_fn(&[2, 2, 2], |i| (i[0] == 0) as u8 as f64);
        let l = iou_loss(&probs, &Tensor::ones(&[2, 2]), DEFAULT_IOU_EPS).unwrap();
        assert!((l.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fusion_loss_zero_when_all_agree() {
        let img = Rng::new(3, 0).uniform_tensor(&[1, 6, 6], 0.0, 1.0);
        let l = fusion_loss(&img, &img, &img, FusionLossWeights::default()).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn fusion_loss_on_constants() {
        let w = FusionLossWeights::new(0.3, 0.7, 0.0).unwrap();
        let l = fusion_loss(
            &Tensor::full(&[4, 4], 0.6),
            &Tensor::full(&[4, 4], 0.2),
            &Tensor::full(&[4, 4], 0.9),
            w,
        )
        .unwrap();
        assert!((l.value - (0.3 * 0.4 + 0.7 * 0.3)).abs() < 1e-15);
        assert!(FusionLossWeights::new(-0.1, 0.0, 0.0).is_err());
    }

    #[test]
    fn sobel_matches_direct_stencil_on_ramp() {
        // Interior horizontal ramp x = j has ∂x response 8 and ∂y response 0.
        let ramp: Vec<f64> = (0..25).map(|i| (i % 5) as f64).collect();
        let gx = sobel(&ramp, 5, 5, false);
        let gy = sobel(&ramp, 5, 5, true);
        assert_eq!(gx[2 * 5 + 2], 8.0);
        assert_eq!(gy[2 * 5 + 2], 0.0);
    }

    #[test]
    fn sobel_adjoint_is_transpose() {
        let mut rng = Rng::new(4, 0);
        let (h, w) = (4, 5);
        let x: Vec<f64> = (0..h * w).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let y: Vec<f64> = (0..h * w).map(|_| rng.uniform(-1.0, 1.0)).collect();
        for vertical in [false, true] {
            let lhs: f64 = sobel(&x, h, w, vertical).iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(sobel_adjoint(&y, h, w, vertical)).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn total_loss_arithmetic() {
        let r = total_loss(1.0, 2.0, 10.0);
        assert_eq!((r.seg, r.total), (3.0, 4.0));
        let r = total_loss(0.7, 0.2, 0.0);
        assert_eq!(r.total, r.seg);
    }
}
