//! Segmentation and fusion decoders.

use crate::blocks::FusedFeature;
use crate::error::{Error, Result};
use crate::image::ImagePair;
use crate::rng::ParamSet;
use crate::tensor::{resize_bilinear, Conv2d, Linear, Padding, Tensor};

pub const SCALES: usize = 4;
/// Per-scale, per-modality width in the fusion head.
pub const FUSION_WIDTH: usize = 4;
pub const FUSION_HIDDEN: usize = 8;

/// Class logits `[K, H, W]` and their per-pixel argmax `[H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegMap {
    pub classes: Tensor,
    pub logits: Tensor,
}

impl SegMap {
    /// Ties go to the lowest class id.
    pub fn from_logits(logits: Tensor) -> Result<Self> {
        let (k, h, w) = match logits.shape() {
            [k, h, w] => (*k, *h, *w),
            s => return Err(Error::dim(format!("logits must be [K, H, W], got {s:?}"))),
        };
        let p = h * w;
        let d = logits.data();
        let classes = (0..p)
            .map(|pix| (0..k).fold(0, |b, c| if d[c * p + pix] > d[b * p + pix] { c } else { b }) as f64)
            .collect();
        Ok(SegMap {
            classes: Tensor::from_vec(&[h, w], classes)?,
            logits,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.logits.dim(0)
    }

    pub fn probabilities(&self) -> Result<Tensor> {
        self.logits.softmax(0)
    }
}

/// Grayscale fused image `[1, H, W]` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedImage {
    pub pixels: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegHeadParams {
    /// Per scale: `C_s → width` 1×1 projection.
    pub project: Vec<Linear>,
    /// Per scale: `width → width` 3×3 refinement.
    pub refine: Vec<Conv2d>,
    /// `scales · width → K` 1×1 classifier.
    pub classify: Linear,
}

impl SegHeadParams {
    pub fn init(ps: &ParamSet, channels: &[usize], width: usize, classes: usize) -> Self {
        SegHeadParams {
            project: channels
                .iter()
                .enumerate()
                .map(|(i, &c)| ps.linear(&format!("project{i}"), c, width))
                .collect(),
            refine: (0..channels.len())
                .map(|i| ps.conv(&format!("refine{i}"), width, width, 3, 1))
                .collect(),
            classify: ps.linear("classify", channels.len() * width, classes),
        }
    }
}

/// Shared decoder body over any number of `[1, C_s, H_s, W_s]` maps.
pub fn decode_scales(maps: &[Tensor], out_hw: (usize, usize), p: &SegHeadParams) -> Result<SegMap> {
    if maps.len() != p.project.len() || maps.len() != p.refine.len() {
        return Err(Error::Config(format!(
            "{} feature scales for a head built for {}",
            maps.len(),
            p.project.len()
        )));
    }
    let mut up = Vec::with_capacity(maps.len());
    for ((m, proj), conv) in maps.iter().zip(&p.project).zip(&p.refine) {
        if m.dims4()?[0] != 1 {
            return Err(Error::dim("heads decode one image at a time"));
        }
        let z = conv.forward(&proj.forward_channels(m)?)?;
        up.push(resize_bilinear(&z, out_hw.0, out_hw.1)?);
    }
    let refs: Vec<&Tensor> = up.iter().collect();
    let logits = p.classify.forward_channels(&Tensor::concat(&refs, 1)?)?;
    let k = logits.dim(1);
    SegMap::from_logits(logits.into_shape(&[k, out_hw.0, out_hw.1])?)
}

pub fn segmentation_head(fused: &[FusedFeature], out_hw: (usize, usize), p: &SegHeadParams) -> Result<SegMap> {
    if fused.len() != SCALES {
        return Err(Error::Config(format!("segmentation head needs {SCALES} scales, got {}", fused.len())));
    }
    let maps = fused.iter().map(FusedFeature::to_map).collect::<Result<Vec<_>>>()?;
    decode_scales(&maps, out_hw, p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionHeadParams {
    pub compress_vis: Vec<Linear>,
    pub compress_ir: Vec<Linear>,
    /// `(2 · scales · FUSION_WIDTH + 2) → FUSION_HIDDEN`, 3×3.
    pub conv1: Conv2d,
    /// `FUSION_HIDDEN → 1`, 3×3.
    pub conv2: Conv2d,
}

impl FusionHeadParams {
    pub fn init(ps: &ParamSet, channels: &[usize]) -> Self {
        let compress = |tag: &str| -> Vec<Linear> {
            channels
                .iter()
                .enumerate()
                .map(|(i, &c)| ps.linear(&format!("{tag}{i}"), c, FUSION_WIDTH))
                .collect()
        };
        let c_in = 2 * channels.len() * FUSION_WIDTH + 2;
        FusionHeadParams {
            compress_vis: compress("compress_vis"),
            compress_ir: compress("compress_ir"),
            conv1: ps.conv("conv1", FUSION_HIDDEN, c_in, 3, 1),
            conv2: ps.conv("conv2", 1, FUSION_HIDDEN, 3, 1),
        }
    }

    pub fn zeros(channels: &[usize]) -> Self {
        let c_in = 2 * channels.len() * FUSION_WIDTH + 2;
        let zero_conv = |co, ci| Conv2d::new(Tensor::zeros(&[co, ci, 3, 3]), None, 1, Padding::Same).expect("valid conv");
        FusionHeadParams {
            compress_vis: channels.iter().map(|&c| Linear::zeros(c, FUSION_WIDTH)).collect(),
            compress_ir: channels.iter().map(|&c| Linear::zeros(c, FUSION_WIDTH)).collect(),
            conv1: zero_conv(FUSION_HIDDEN, c_in),
            conv2: zero_conv(1, FUSION_HIDDEN),
        }
    }
}

pub fn fusion_head(ev: &[Tensor], ei: &[Tensor], pair: &ImagePair, p: &FusionHeadParams) -> Result<FusedImage> {
    if ev.len() != p.compress_vis.len() || ei.len() != p.compress_ir.len() {
        return Err(Error::Config("fusion head scale count mismatch".into()));
    }
    let (h, w) = (pair.height(), pair.width());
    let mut parts = Vec::with_capacity(ev.len() + ei.len() + 2);
    for (maps, compress) in [(ev, &p.compress_vis), (ei, &p.compress_ir)] {
        for (m, lin) in maps.iter().zip(compress) {
            parts.push(resize_bilinear(&lin.forward_channels(m)?, h, w)?);
        }
    }
    parts.push(pair.visible_gray().into_shape(&[1, 1, h, w])?);
    parts.push(pair.infrared.reshape(&[1, 1, h, w])?);
    let refs: Vec<&Tensor> = parts.iter().collect();
    let hidden = p.conv1.forward(&Tensor::concat(&refs, 1)?)?.relu();
    let out = p.conv2.forward(&hidden)?.sigmoid();
    Ok(FusedImage {
        pixels: out.into_shape(&[1, h, w])?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn single_class_is_always_zero() {
        let logits = Rng::new(1, 0).uniform_tensor(&[1, 3, 3], -5.0, 5.0);
        let s = SegMap::from_logits(logits).unwrap();
        assert!(s.classes.data().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn argmax_ignores_common_offsets() {
        let logits = Rng::new(2, 0).uniform_tensor(&[5, 4, 4], -2.0, 2.0);
        let a = SegMap::from_logits(logits.clone()).unwrap();
        let b = SegMap::from_logits(logits.map(|v| v + 3.25)).unwrap();
        assert_eq!(a.classes, b.classes);
    }

    #[test]
    fn two_scale_identity_toy_matches_hand_pipeline() {
        // Identity projections and delta 3x3 convs: logits are the classifier
        // applied to the bilinearly upsampled input maps.
        let c = 2;
        let p = SegHeadParams {
            project: vec![Linear::identity(c), Linear::identity(c)],
            refine: vec![Conv2d::dense_identity(c, 3), Conv2d::dense_identity(c, 3)],
            classify: Linear::new(
                Tensor::from_vec(&[4, 3], vec![1.0, 0.0, 0.5, 0.0, 1.0, 0.0, -1.0, 0.0, 0.5, 0.0, -1.0, 0.0]).unwrap(),
                None,
            )
            .unwrap(),
        };
        let a = Rng::new(3, 0).uniform_tensor(&[1, c, 2, 2], -1.0, 1.0);
        let b = Rng::new(3, 1).uniform_tensor(&[1, c, 1, 1], -1.0, 1.0);
        let seg = decode_scales(&[a.clone(), b.clone()], (3, 3), &p).unwrap();
        // Align-corners upsampling of 2x2 → 3x3: centre is the mean of corners,
        // edges are midpoints; 1x1 → 3x3 is constant.
        let up = |ch: usize, i: usize, j: usize| {
            let g = |y: usize, x: usize| a.at(&[0, ch, y, x]);
            let fy = i as f64 / 2.0;
            let fx = j as f64 / 2.0;
            (1.0 - fy) * ((1.0 - fx) * g(0, 0) + fx * g(0, 1)) + fy * ((1.0 - fx) * g(1, 0) + fx * g(1, 1))
        };
        for i in 0..3 {
            for j in 0..3 {
                let f = [up(0, i, j), up(1, i, j), b.data()[0], b.data()[1]];
                let expect = [f[0] - f[2], f[1] - f[3], 0.5 * f[0] + 0.5 * f[2]];
                for (k, e) in expect.iter().enumerate() {
                    assert!((seg.logits.at(&[k, i, j]) - e).abs() < 1e-12);
                }
            }
        }
        assert!(matches!(decode_scales(&[a], (3, 3), &p), Err(Error::Config(_))));
    }

    #[test]
    fn segmentation_head_requires_four_scales() {
        let p = SegHeadParams::init(&ParamSet::new(4), &[4, 4], 8, 5);
        let f = FusedFeature {
            tokens: Tensor::zeros(&[1, 4, 4]),
            height: 2,
            width: 2,
        };
        assert!(matches!(segmentation_head(&[f.clone(), f], (4, 4), &p), Err(Error::Config(_))));
    }

    fn toy_pair() -> ImagePair {
        let mut rng = Rng::new(5, 0);
        ImagePair::new(rng.uniform_tensor(&[3, 8, 8], 0.0, 1.0), rng.uniform_tensor(&[1, 8, 8], 0.0, 1.0), None).unwrap()
    }

    fn toy_scales(seed: u64) -> Vec<Tensor> {
        let mut rng = Rng::new(seed, 1);
        [(4, 4), (2, 2), (1, 1), (1, 1)]
            .iter()
            .map(|&(h, w)| rng.uniform_tensor(&[1, 4, h, w], -3.0, 3.0))
            .collect()
    }

    #[test]
    fn fusion_head_range_and_shape() {
        let p = FusionHeadParams::init(&ParamSet::new(6), &[4; 4]);
        let out = fusion_head(&toy_scales(1), &toy_scales(2), &toy_pair(), &p).unwrap();
        assert_eq!(out.pixels.shape(), &[1, 8, 8]);
        assert!(out.pixels.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_fusion_head_is_mid_gray() {
        let out = fusion_head(&toy_scales(1), &toy_scales(2), &toy_pair(), &FusionHeadParams::zeros(&[4; 4])).unwrap();
        assert!(out.pixels.data().iter().all(|&v| v == 0.5));
    }
}
