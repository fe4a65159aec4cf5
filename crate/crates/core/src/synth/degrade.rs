//! Scene-condition degradations. Masks are never touched.

use std::f64::consts::PI;

use super::scene::{LabeledSample, Regime};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const AIRLIGHT: f64 = 0.8;
const LOW_LIGHT_DIM: f64 = 0.9;
const LOW_LIGHT_NOISE: f64 = 0.05;
const IR_NOISE: f64 = 0.02;
const GLARE_PATCHES: usize = 3;
const GLARE_PEAK: f64 = 0.7;

fn clip(t: &Tensor) -> Tensor {
    t.map(|v| v.clamp(0.0, 1.0))
}

fn add_noise(mut t: Tensor, rng: &mut Rng, std: f64) -> Tensor {
    t.data_mut().iter_mut().for_each(|v| *v += rng.normal(0.0, std));
    t
}

/// Scattering blend `(1 − t) J + t A` with `t = strength · depth`, where depth
/// falls linearly from 1 on the top row to 0 on the bottom row.
pub fn fog(visible: &Tensor, strength: f64) -> Tensor {
    let h = visible.dim(1);
    Tensor::from_fn(visible.shape(), |i| {
        let depth = if h > 1 { 1.0 - i[1] as f64 / (h - 1) as f64 } else { 1.0 };
        let t = strength * depth;
        (1.0 - t) * visible.at(i) + t * AIRLIGHT
    })
}

/// `ir + strength · (box3(ir) − ir)` with edge replication.
pub fn soften_infrared(ir: &Tensor, strength: f64) -> Tensor {
    let (h, w) = (ir.dim(1), ir.dim(2));
    let d = ir.data();
    Tensor::from_fn(ir.shape(), |i| {
        let mut acc = 0.0;
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let y = (i[1] as isize + dy).clamp(0, h as isize - 1) as usize;
                let x = (i[2] as isize + dx).clamp(0, w as isize - 1) as usize;
                acc += d[y * w + x];
            }
        }
        let v = d[i[1] * w + i[2]];
        v + strength * (acc / 9.0 - v)
    })
}

/// Dims by `1 − 0.9 · strength`; adds `N(0, 0.05 · strength)` when `noise` is given.
pub fn low_light(visible: &Tensor, strength: f64, noise: Option<&mut Rng>) -> Tensor {
    let dimmed = visible.scale(1.0 - LOW_LIGHT_DIM * strength);
    match noise {
        Some(rng) => clip(&add_noise(dimmed, rng, LOW_LIGHT_NOISE * strength)),
        None => dimmed,
    }
}

/// Adds seeded elliptical specular patches scaled by `strength`, clipped to 1.
pub fn glare(visible: &Tensor, strength: f64, rng: &mut Rng) -> Tensor {
    let (h, w) = (visible.dim(1) as f64, visible.dim(2) as f64);
    let patches: Vec<[f64; 5]> = (0..GLARE_PATCHES)
        .map(|_| {
            [
                rng.uniform(0.0, w),
                rng.uniform(0.0, h),
                rng.uniform(0.08, 0.25) * w,
                rng.uniform(0.03, 0.1) * h,
                rng.uniform(0.0, PI),
            ]
        })
        .collect();
    let out = Tensor::from_fn(visible.shape(), |i| {
        let (x, y) = (i[2] as f64 + 0.5, i[1] as f64 + 0.5);
        let boost: f64 = patches
            .iter()
            .map(|&[cx, cy, a, b, theta]| {
                let (s, c) = theta.sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                let u = (dx * c + dy * s) / a;
                let v = (-dx * s + dy * c) / b;
                (1.0 - (u * u + v * v)).max(0.0)
            })
            .sum();
        visible.at(i) + strength * GLARE_PEAK * boost
    });
    clip(&out)
}

/// Applies the scene's regime at its strength. Randomness comes from
/// the scene seed, so the result is a pure function of the sample.
pub fn degrade(sample: &LabeledSample) -> LabeledSample {
    let spec = &sample.spec;
    let s = spec.strength;
    let mut out = sample.clone();
    let pair = &mut out.pair;
    match spec.regime {
        Regime::Normal => {}
        Regime::Foggy => {
            pair.visible = clip(&fog(&pair.visible, s));
            pair.infrared = clip(&soften_infrared(&pair.infrared, s));
        }
        Regime::LowLight => {
            let mut rng = Rng::for_label(spec.seed, "low-light");
            pair.visible = low_light(&pair.visible, s, Some(&mut rng));
        }
        Regime::Reflection => {
            let mut rng = Rng::for_label(spec.seed, "glare");
            pair.visible = glare(&pair.visible, s, &mut rng);
        }
    }
    if spec.ir_noise {
        let mut rng = Rng::for_label(spec.seed, "ir-noise");
        pair.infrared = clip(&add_noise(pair.infrared.clone(), &mut rng, IR_NOISE * s));
    }
    out
}
