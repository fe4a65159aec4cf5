//! Radix-2 FFT, real 2-D half spectra and the magnitude-denoising refinement.
//!
//! Planes whose sides are not powers of two are zero-padded to the next power
//! of two before the forward transform and cropped after the inverse.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::rng::ParamSet;
use crate::tensor::{Conv2d, Tensor};

/// In-place iterative Cooley–Tukey FFT. `inverse` applies the conjugate
/// twiddles and the `1/n` scaling.
pub fn fft_inplace(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    assert!(n.is_power_of_two(), "FFT length must be a power of two");
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let w = Complex64::from_polar(1.0, ang * k as f64);
                let u = buf[start + k];
                let v = buf[start + k + len / 2] * w;
                buf[start + k] = u + v;
                buf[start + k + len / 2] = u - v;
            }
        }
        len <<= 1;
    }
    if inverse {
        let s = 1.0 / n as f64;
        buf.iter_mut().for_each(|v| *v *= s);
    }
}

/// 2-D FFT of a row-major `h × w` plane.
pub fn fft2_inplace(plane: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    assert_eq!(plane.len(), h * w);
    for row in plane.chunks_mut(w) {
        fft_inplace(row, inverse);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            col[i] = plane[i * w + j];
        }
        fft_inplace(&mut col, inverse);
        for i in 0..h {
            plane[i * w + j] = col[i];
        }
    }
}

/// Polar half spectrum of a real `[B, C, H, W]` tensor.
///
/// `magnitude` and `phase` have shape `[B, C, Hp, Wp/2 + 1]`, where
/// `(Hp, Wp)` are the padded power-of-two sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub magnitude: Tensor,
    pub phase: Tensor,
    /// Spatial size of the source before padding.
    pub source_hw: (usize, usize),
    /// Power-of-two transform size.
    pub padded_hw: (usize, usize),
}

impl Spectrum {
    pub fn forward(x: &Tensor) -> Result<Spectrum> {
        let [b, c, h, w] = x.dims4()?;
        let (hp, wp) = (h.next_power_of_two(), w.next_power_of_two());
        let wh = wp / 2 + 1;
        let mut mag = Vec::with_capacity(b * c * hp * wh);
        let mut pha = Vec::with_capacity(b * c * hp * wh);
        let mut buf = vec![Complex64::new(0.0, 0.0); hp * wp];
        for plane in x.data().chunks(h * w) {
            buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for i in 0..h {
                for j in 0..w {
                    buf[i * wp + j] = Complex64::new(plane[i * w + j], 0.0);
                }
            }
            fft2_inplace(&mut buf, hp, wp, false);
            for i in 0..hp {
                for j in 0..wh {
                    let z = buf[i * wp + j];
                    mag.push(z.norm());
                    pha.push(z.arg());
                }
            }
        }
        Ok(Spectrum {
            magnitude: Tensor::from_vec(&[b, c, hp, wh], mag)?,
            phase: Tensor::from_vec(&[b, c, hp, wh], pha)?,
            source_hw: (h, w),
            padded_hw: (hp, wp),
        })
    }

    /// Recombines magnitude and phase, extends the half spectrum by Hermitian
    /// symmetry, inverts and crops back to the source size.
    pub fn inverse(&self) -> Result<Tensor> {
        let [b, c, hp, wh] = self.magnitude.dims4()?;
        if self.phase.shape() != self.magnitude.shape() {
            return Err(Error::dim("magnitude and phase shapes differ"));
        }
        let (h, w) = self.source_hw;
        let wp = self.padded_hw.1;
        if hp != self.padded_hw.0 || wh != wp / 2 + 1 {
            return Err(Error::dim("half spectrum does not match padded size"));
        }
        let mut out = Vec::with_capacity(b * c * h * w);
        let mut buf = vec![Complex64::new(0.0, 0.0); hp * wp];
        let (m, p) = (self.magnitude.data(), self.phase.data());
        for plane in 0..b * c {
            let base = plane * hp * wh;
            for i in 0..hp {
                for j in 0..wh {
                    let k = base + i * wh + j;
                    buf[i * wp + j] = Complex64::from_polar(m[k], p[k]);
                }
            }
            for i in 0..hp {
                for j in wh..wp {
                    buf[i * wp + j] = buf[((hp - i) % hp) * wp + (wp - j)].conj();
                }
            }
            fft2_inplace(&mut buf, hp, wp, true);
            for i in 0..h {
                for j in 0..w {
                    out.push(buf[i * wp + j].re);
                }
            }
        }
        Tensor::from_vec(&[b, c, h, w], out)
    }

    /// Full-spectrum energy `Σ|F|² / (Hp·Wp)` recovered from the half
    /// spectrum; equals `Σx²` by Parseval.
    pub fn energy(&self) -> f64 {
        let (hp, wp) = self.padded_hw;
        let wh = wp / 2 + 1;
        let m = self.magnitude.data();
        let mut total = 0.0;
        for (k, v) in m.iter().enumerate() {
            let j = k % wh;
            let mirrored = j == 0 || (wp % 2 == 0 && j == wp / 2);
            let weight = if mirrored { 1.0 } else { 2.0 };
            total += weight * v * v;
        }
        total / (hp * wp) as f64
    }
}

/// Weights of the frequency refinement: two `3×3` convolutions on the
/// magnitude stack (ReLU between) and a depthwise `3×3` in the spatial domain.
#[derive(Clone, Debug, PartialEq)]
pub struct FftRefineParams {
    pub denoise1: Conv2d,
    pub denoise2: Conv2d,
    pub depthwise: Conv2d,
}

impl FftRefineParams {
    pub fn init(ps: &ParamSet, channels: usize) -> Self {
        FftRefineParams {
            denoise1: ps.conv("denoise1", channels, channels, 3, 1),
            denoise2: ps.conv("denoise2", channels, channels, 3, 1),
            depthwise: ps.conv("depthwise", channels, channels, 3, channels),
        }
    }

    /// Delta kernels everywhere: the refinement becomes the identity map.
    pub fn identity(channels: usize) -> Self {
        FftRefineParams {
            denoise1: Conv2d::dense_identity(channels, 3),
            denoise2: Conv2d::dense_identity(channels, 3),
            depthwise: Conv2d::depthwise_identity(channels, 3),
        }
    }
}

/// Denoises the magnitude spectrum, keeps the phase, and transforms back.
/// This is [`fft_refine`] without the closing depthwise convolution.
pub fn refine_spectrum(x: &Tensor, p: &FftRefineParams) -> Result<Tensor> {
    let spec = Spectrum::forward(x)?;
    let hidden = p.denoise1.forward(&spec.magnitude)?.relu();
    let magnitude = p.denoise2.forward(&hidden)?;
    Spectrum { magnitude, ..spec }.inverse()
}

pub fn fft_refine(x: &Tensor, p: &FftRefineParams) -> Result<Tensor> {
    p.depthwise.forward(&refine_spectrum(x, p)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn constant_image_has_only_dc() {
        let s = Spectrum::forward(&Tensor::full(&[1, 1, 8, 8], 0.25)).unwrap();
        for (k, &m) in s.magnitude.data().iter().enumerate() {
            if k == 0 {
                assert!((m - 16.0).abs() < 1e-12);
            } else {
                assert!(m < 1e-12);
            }
        }
    }

    #[test]
    fn roundtrip_including_non_power_of_two() {
        let mut rng = Rng::new(3, 0);
        for &(h, w) in &[(8, 8), (16, 4), (6, 10), (1, 5)] {
            let x = rng.uniform_tensor(&[2, 2, h, w], -1.0, 1.0);
            let s = Spectrum::forward(&x).unwrap();
            assert!(s.magnitude.data().iter().all(|&m| m >= 0.0));
            assert!(s.inverse().unwrap().max_abs_diff(&x) < 1e-12);
        }
    }

    #[test]
    fn identity_refinement_reproduces_input() {
        let x = Rng::new(4, 0).uniform_tensor(&[1, 3, 8, 8], -2.0, 2.0);
        let y = fft_refine(&x, &FftRefineParams::identity(3)).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-8);
    }

    #[test]
    fn random_refinement_keeps_shape() {
        let ps = ParamSet::new(9);
        let x = Rng::new(5, 0).uniform_tensor(&[1, 4, 6, 12], -1.0, 1.0);
        let y = fft_refine(&x, &FftRefineParams::init(&ps, 4)).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.is_finite());
    }
}
