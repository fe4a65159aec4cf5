//! Frozen pyramid encoder: patch means, a fixed affine projection per stage,
//! and a channel layer norm.

use crate::error::{Error, Result};
use crate::image::ImagePair;
use crate::rng::ParamSet;
use crate::tensor::{Linear, NormAffine, PoolKind, Tensor};

pub const STAGE_STRIDES: [usize; 4] = [4, 8, 16, 32];
const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
struct Stage {
    stride: usize,
    visible: Linear,
    infrared: Linear,
    norm: NormAffine,
}

/// Four-stage feature extractor whose weights are fixed at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStub {
    stages: Vec<Stage>,
}

/// Per-stage `[1, C_s, H / s, W / s]` maps for each modality.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityFeatures {
    pub visible: Vec<Tensor>,
    pub infrared: Vec<Tensor>,
}

/// Mean of every non-overlapping `stride × stride` patch of a `[C, H, W]` image.
pub fn patch_means(image: &Tensor, stride: usize) -> Result<Tensor> {
    let (c, h, w) = match image.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::dim(format!("expected [C, H, W], got {s:?}"))),
    };
    if stride == 0 || h % stride != 0 || w % stride != 0 {
        return Err(Error::dim(format!("{h}x{w} image does not tile into {stride}-pixel patches")));
    }
    let (ho, wo) = (h / stride, w / stride);
    image
        .reshape(&[c, ho, stride, wo, stride])?
        .pool(PoolKind::Mean, &[2, 4])?
        .into_shape(&[1, c, ho, wo])
}

impl EncoderStub {
    pub fn new(ps: &ParamSet, channels: [usize; 4]) -> Self {
        let stages = STAGE_STRIDES
            .iter()
            .zip(channels)
            .enumerate()
            .map(|(i, (&stride, c))| {
                let sp = ps.child(&format!("stage{i}"));
                Stage {
                    stride,
                    visible: sp.linear_with_bias("visible", 3, c),
                    infrared: sp.linear_with_bias("infrared", 1, c),
                    norm: sp.norm_affine(c),
                }
            })
            .collect();
        EncoderStub { stages }
    }

    pub fn channels(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.visible.d_out()).collect()
    }

    fn stage_features(&self, image: &Tensor, stage: usize, proj: &Linear) -> Result<Tensor> {
        let s = &self.stages[stage];
        let projected = proj.forward_channels(&patch_means(image, s.stride)?)?;
        s.norm.apply(&projected.layer_norm(1, LN_EPS)?, 1)
    }

    pub fn encode(&self, pair: &ImagePair) -> Result<ModalityFeatures> {
        let (h, w) = (pair.height(), pair.width());
        if h % 32 != 0 || w % 32 != 0 {
            return Err(Error::dim(format!("encoder input {h}x{w} is not a multiple of 32")));
        }
        let mut out = ModalityFeatures {
            visible: Vec::with_capacity(4),
            infrared: Vec::with_capacity(4),
        };
        for (i, s) in self.stages.iter().enumerate() {
            out.visible.push(self.stage_features(&pair.visible, i, &s.visible)?);
            out.infrared.push(self.stage_features(&pair.infrared, i, &s.infrared)?);
        }
        Ok(out)
    }
}
