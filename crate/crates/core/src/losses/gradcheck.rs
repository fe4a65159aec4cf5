//! Central-difference verification of analytic gradients.

use serde::{Deserialize, Serialize};

use super::LossValue;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error: finite differences of an O(1)
/// loss carry ~1e-11 of roundoff, which must not read as a mismatch where the
/// analytic gradient is exactly zero.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates to check (all of them if the point is smaller).
    pub coords: usize,
    pub seed: u64,
    /// A coordinate is skipped when a non-smooth residual it moves lies
    /// within `kink_margin · step` of zero.
    pub kink_margin: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            coords: 64,
            seed: 0,
            kink_margin: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub loss: f64,
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub skipped_kinks: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.coords_checked > 0 && self.max_rel_err < tolerance
    }
}

/// Compares `f(point).grad` with central differences on a random subset of
/// coordinates. `kink_distance(point, i)` reports how close coordinate `i`
/// sits to a non-differentiable point; pass `None` for smooth functions.
pub fn gradient_check(
    f: impl Fn(&Tensor) -> Result<LossValue>,
    point: &Tensor,
    opts: GradCheckOptions,
    kink_distance: Option<&dyn Fn(&Tensor, usize) -> f64>,
) -> Result<GradCheckReport> {
    if !(opts.step > 0.0) {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    let base = f(point)?;
    if base.grad.shape() != point.shape() {
        return Err(Error::dim("analytic gradient shape differs from the point"));
    }
    let mut order: Vec<usize> = (0..point.len()).collect();
    Rng::for_label(opts.seed, "gradcheck").shuffle(&mut order);

    let h = opts.step;
    let mut probe = point.clone();
    let (mut checked, mut skipped, mut max_rel) = (0, 0, 0.0f64);
    for &i in &order {
        if checked == opts.coords {
            break;
        }
        if let Some(kink) = kink_distance {
            if kink(point, i) < opts.kink_margin * h {
                log::debug!("gradient check: coordinate {i} skipped near a kink");
                skipped += 1;
                continue;
            }
        }
        let x0 = point.data()[i];
        probe.data_mut()[i] = x0 + h;
        let up = f(&probe)?.value;
        probe.data_mut()[i] = x0 - h;
        let down = f(&probe)?.value;
        probe.data_mut()[i] = x0;
        let numeric = (up - down) / (2.0 * h);
        let analytic = base.grad.data()[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        max_rel = max_rel.max(rel);
        checked += 1;
    }
    Ok(GradCheckReport {
        loss: base.value,
        coords_checked: checked,
        max_rel_err: max_rel,
        skipped_kinks: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;

    fn quadratic(x: &Tensor) -> Result<LossValue> {
        Ok(LossValue {
            value: x.data().iter().map(|v| v * v).sum(),
            grad: x.scale(2.0),
        })
    }

    #[test]
    fn quadratic_calibration() {
        // Central differences are exact on quadratics; only roundoff in f remains,
        // so keep f small.
        let x = Rng::new(1, 0).uniform_tensor(&[8], 0.5, 1.0);
        let r = gradient_check(quadratic, &x, GradCheckOptions::default(), None).unwrap();
        assert_eq!(r.coords_checked, 8);
        assert!(r.max_rel_err < 1e-10, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = Rng::new(2, 0).uniform_tensor(&[10, 10], 0.5, 1.0);
        let bad = |t: &Tensor| -> Result<LossValue> {
            let mut v = quadratic(t)?;
            v.grad = v.grad.scale(1.01);
            Ok(v)
        };
        let r = gradient_check(bad, &x, GradCheckOptions::default(), None).unwrap();
        assert!(!r.passed(GRADCHECK_TOLERANCE));
    }

    fn target(seed: u64, k: usize, h: usize, w: usize) -> Tensor {
        let mut rng = Rng::new(seed, 3);
        Tensor::from_fn(&[h, w], |_| rng.below(k) as f64)
    }

    #[test]
    fn focal_gradient() {
        let logits = Rng::new(3, 0).uniform_tensor(&[5, 6, 6], -2.0, 2.0);
        let t = target(3, 5, 6, 6);
        for params in [FocalParams::default(), FocalParams { alpha: 1.0, gamma: 0.0 }, FocalParams { alpha: 0.6, gamma: 0.5 }] {
            let r = gradient_check(|z| focal_loss(z, &t, params), &logits, GradCheckOptions::default(), None).unwrap();
            assert!(r.coords_checked >= 64 && r.passed(GRADCHECK_TOLERANCE), "{params:?}: {r:?}");
        }
    }

    #[test]
    fn iou_gradient() {
        let probs = Rng::new(4, 0).uniform_tensor(&[5, 6, 6], 0.1, 0.9);
        let t = target(4, 5, 6, 6);
        let r = gradient_check(|q| iou_loss(q, &t, DEFAULT_IOU_EPS), &probs, GradCheckOptions::default(), None)
            .unwrap();
        assert!(r.coords_checked >= 64 && r.passed(GRADCHECK_TOLERANCE), "{r:?}");
    }

    #[test]
    fn fusion_gradient_away_from_kinks() {
        let mut rng = Rng::new(5, 0);
        let rgb = rng.uniform_tensor(&[1, 12, 12], 0.0, 1.0);
        let ir = rng.uniform_tensor(&[1, 12, 12], 0.0, 1.0);
        let fused = rng.uniform_tensor(&[1, 12, 12], 0.0, 1.0);
        let w = FusionLossWeights::default();
        let kink = |x: &Tensor, i: usize| fusion_kink_distance(x, &rgb, &ir, i);
        let r = gradient_check(|x| fusion_loss(x, &rgb, &ir, w), &fused, GradCheckOptions::default(), Some(&kink))
            .unwrap();
        assert!(r.coords_checked >= 64 && r.passed(GRADCHECK_TOLERANCE), "{r:?}");
    }
}
