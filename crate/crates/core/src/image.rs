//! Registered infrared–visible image pairs.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// ITU-R BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Visible `[3, H, W]` and infrared `[1, H, W]` images in `[0, 1]`, with an
/// optional `[H, W]` class mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub visible: Tensor,
    pub infrared: Tensor,
    pub mask: Option<Tensor>,
}

impl ImagePair {
    pub fn new(visible: Tensor, infrared: Tensor, mask: Option<Tensor>) -> Result<Self> {
        let (h, w) = match visible.shape() {
            [3, h, w] => (*h, *w),
            s => return Err(Error::dim(format!("visible image must be [3, H, W], got {s:?}"))),
        };
        if infrared.shape() != [1, h, w] {
            return Err(Error::dim(format!(
                "infrared image {:?} does not match visible {h}x{w}",
                infrared.shape()
            )));
        }
        if let Some(m) = &mask {
            if m.shape() != [h, w] {
                return Err(Error::dim(format!("mask {:?} does not match {h}x{w}", m.shape())));
            }
        }
        Ok(ImagePair {
            visible,
            infrared,
            mask,
        })
    }

    pub fn height(&self) -> usize {
        self.visible.dim(1)
    }

    pub fn width(&self) -> usize {
        self.visible.dim(2)
    }

    /// Luma of the visible image, `[1, H, W]`.
    pub fn visible_gray(&self) -> Tensor {
        luma(&self.visible)
    }
}

/// `[3, H, W]` → `[1, H, W]` by weighted channel sum.
pub fn luma(rgb: &Tensor) -> Tensor {
    let (h, w) = (rgb.dim(1), rgb.dim(2));
    let d = rgb.data();
    let plane = h * w;
    Tensor::from_fn(&[1, h, w], |i| {
        let p = i[1] * w + i[2];
        LUMA[0] * d[p] + LUMA[1] * d[plane + p] + LUMA[2] * d[2 * plane + p]
    })
}
