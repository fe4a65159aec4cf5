use super::{numel, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `k / 2` per side; kernel sizes must be odd.
    Same,
    Valid,
    /// Explicit zero padding `(rows, cols)` per side.
    Explicit(usize, usize),
}

/// Grouped 2-D convolution (cross-correlation). `groups == channels` gives a
/// depthwise convolution; 1-D convolutions use a `1 × k` kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    /// `[C_out, C_in / groups, kh, kw]`
    pub weight: Tensor,
    /// `[C_out]`
    pub bias: Option<Tensor>,
    pub groups: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl Conv2d {
    pub fn new(weight: Tensor, bias: Option<Tensor>, groups: usize, padding: Padding) -> Result<Self> {
        if weight.rank() != 4 {
            return Err(Error::dim("conv weight must be [C_out, C_in/g, kh, kw]"));
        }
        let c_out = weight.dim(0);
        if groups == 0 || !c_out.is_multiple_of(groups) {
            return Err(Error::dim(format!("{c_out} output channels not divisible by {groups} groups")));
        }
        if let Some(b) = &bias {
            if b.len() != c_out {
                return Err(Error::dim("conv bias length differs from output channels"));
            }
        }
        if padding == Padding::Same && (weight.dim(2).is_multiple_of(2) || weight.dim(3).is_multiple_of(2)) {
            return Err(Error::dim("same padding needs an odd kernel"));
        }
        Ok(Conv2d {
            weight,
            bias,
            groups,
            stride: 1,
            padding,
        })
    }

    /// Depthwise `k × k` delta kernel: passes the input through unchanged.
    pub fn depthwise_identity(channels: usize, k: usize) -> Self {
        let mut w = Tensor::zeros(&[channels, 1, k, k]);
        for c in 0..channels {
            w.set(&[c, 0, k / 2, k / 2], 1.0);
        }
        Conv2d::new(w, None, channels, Padding::Same).expect("valid identity conv")
    }

    /// Dense `k × k` delta kernel mapping channel `c` to channel `c`.
    pub fn dense_identity(channels: usize, k: usize) -> Self {
        let mut w = Tensor::zeros(&[channels, channels, k, k]);
        for c in 0..channels {
            w.set(&[c, c, k / 2, k / 2], 1.0);
        }
        Conv2d::new(w, None, 1, Padding::Same).expect("valid identity conv")
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim(1) * self.groups
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    fn pads(&self) -> (usize, usize) {
        match self.padding {
            Padding::Same => (self.weight.dim(2) / 2, self.weight.dim(3) / 2),
            Padding::Valid => (0, 0),
            Padding::Explicit(ph, pw) => (ph, pw),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let [b, c_in, h, w] = x.dims4()?;
        if c_in != self.in_channels() {
            return Err(Error::dim(format!(
                "conv expects {} input channels, got {c_in}",
                self.in_channels()
            )));
        }
        let (kh, kw) = (self.weight.dim(2), self.weight.dim(3));
        let (ph, pw) = self.pads();
        if kh > h + 2 * ph || kw > w + 2 * pw {
            return Err(Error::dim(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * ph,
                w + 2 * pw
            )));
        }
        let s = self.stride.max(1);
        let ho = (h + 2 * ph - kh) / s + 1;
        let wo = (w + 2 * pw - kw) / s + 1;
        let c_out = self.out_channels();
        let cin_g = c_in / self.groups;
        let cout_g = c_out / self.groups;
        let xd = x.data();
        let wd = self.weight.data();
        let mut out = vec![0.0; b * c_out * ho * wo];
        for bi in 0..b {
            for co in 0..c_out {
                let g = co / cout_g;
                let bias = self.bias.as_ref().map_or(0.0, |t| t.data()[co]);
                let obase = (bi * c_out + co) * ho * wo;
                out[obase..obase + ho * wo].iter_mut().for_each(|v| *v = bias);
                for ci in 0..cin_g {
                    let cin = g * cin_g + ci;
                    let xbase = (bi * c_in + cin) * h * w;
                    let wbase = (co * cin_g + ci) * kh * kw;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = wd[wbase + ky * kw + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            for oy in 0..ho {
                                let iy = (oy * s + ky) as isize - ph as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let row = xbase + iy as usize * w;
                                let orow = obase + oy * wo;
                                for ox in 0..wo {
                                    let ix = (ox * s + kx) as isize - pw as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    out[orow + ox] += wv * xd[row + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[b, c_out, ho, wo], out)
    }

    /// 1-D convolution over `[B, C, L]`; the kernel must be `1 × k`.
    pub fn forward_1d(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 3 {
            return Err(Error::dim(format!("expected [B, C, L], got {:?}", x.shape())));
        }
        if self.weight.dim(2) != 1 {
            return Err(Error::dim("1-D convolution needs a 1 x k kernel"));
        }
        let (b, c, l) = (x.dim(0), x.dim(1), x.dim(2));
        let y = self.forward(&x.reshape(&[b, c, 1, l])?)?;
        let lo = y.dim(3);
        y.into_shape(&[b, self.out_channels(), lo])
    }
}

/// Dense projection over the last axis: `y = x · W + b` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(weight: Tensor, bias: Option<Tensor>) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::dim("linear weight must be [in, out]"));
        }
        if let Some(b) = &bias {
            if b.len() != weight.dim(1) {
                return Err(Error::dim("linear bias length differs from output width"));
            }
        }
        Ok(Linear { weight, bias })
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[d_in, d_out]),
            bias: None,
        }
    }

    pub fn identity(d: usize) -> Self {
        Linear {
            weight: Tensor::eye(d),
            bias: None,
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn d_out(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let last = *x.shape().last().expect("rank >= 1");
        if last != self.d_in() {
            return Err(Error::dim(format!(
                "linear expects width {}, got {:?}",
                self.d_in(),
                x.shape()
            )));
        }
        let rows = x.len() / last;
        let y = x.reshape(&[rows, last])?.matmul(&self.weight)?;
        let y = match &self.bias {
            Some(b) => y.add(b)?,
            None => y,
        };
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = self.d_out();
        y.into_shape(&shape)
    }

    /// Applies the projection per pixel over the channel axis of `[B, C, H, W]`.
    pub fn forward_channels(&self, x: &Tensor) -> Result<Tensor> {
        x.dims4()?;
        Ok(self.forward(&x.permute(&[0, 2, 3, 1]))?.permute(&[0, 3, 1, 2]))
    }
}

/// Per-channel affine applied after normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct NormAffine {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl NormAffine {
    pub fn identity(channels: usize) -> Self {
        NormAffine {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
        }
    }

    /// Scales and shifts along `axis`, whose extent must equal the channel count.
    pub fn apply(&self, x: &Tensor, axis: usize) -> Result<Tensor> {
        if axis >= x.rank() || x.dim(axis) != self.gamma.len() {
            return Err(Error::dim(format!(
                "affine over {} channels does not fit axis {axis} of {:?}",
                self.gamma.len(),
                x.shape()
            )));
        }
        let inner = numel(&x.shape()[axis + 1..]);
        let c = self.gamma.len();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (i / inner) % c;
            *v = *v * self.gamma[ch] + self.beta[ch];
        }
        Ok(out)
    }
}

/// Bilinear resize of `[B, C, h, w]` to `[B, C, H, W]` with aligned corners.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [b, c, h, w] = x.dims4()?;
    let coord = |i: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        if n_in == 1 || n_out == 1 {
            return (0, 0, 0.0);
        }
        let src = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (src.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, src - lo as f64)
    };
    let rows: Vec<_> = (0..out_h).map(|i| coord(i, h, out_h)).collect();
    let cols: Vec<_> = (0..out_w).map(|j| coord(j, w, out_w)).collect();
    let xd = x.data();
    let mut out = Vec::with_capacity(b * c * out_h * out_w);
    for plane in 0..b * c {
        let p = &xd[plane * h * w..(plane + 1) * h * w];
        for &(y0, y1, fy) in &rows {
            for &(x0, x1, fx) in &cols {
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bot = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::from_vec(&[b, c, out_h, out_w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_identity_conv() {
        let x = Tensor::from_fn(&[1, 3, 4, 5], |i| (i[1] * 20 + i[2] * 5 + i[3]) as f64 * 0.1);
        assert_eq!(Conv2d::dense_identity(3, 1).forward(&x).unwrap(), x);
        assert_eq!(Conv2d::depthwise_identity(3, 3).forward(&x).unwrap(), x);
    }

    #[test]
    fn delta_depthwise_1d() {
        let x = Tensor::from_fn(&[2, 2, 7], |i| (i[0] * 14 + i[1] * 7 + i[2]) as f64);
        let w = Tensor::from_vec(&[2, 1, 1, 3], vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let conv = Conv2d::new(w, None, 2, Padding::Same).unwrap();
        assert_eq!(conv.forward_1d(&x).unwrap(), x);
    }

    #[test]
    fn box_kernel_on_impulse_gives_plateau() {
        let mut x = Tensor::zeros(&[1, 1, 7, 7]);
        x.set(&[0, 0, 3, 3], 1.0);
        let conv = Conv2d::new(Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0), None, 1, Padding::Same).unwrap();
        let y = conv.forward(&x).unwrap();
        // Direct oracle: output(i, j) = sum over the 3x3 window centred at (i, j).
        for i in 0..7 {
            for j in 0..7 {
                let inside = (2..=4).contains(&i) && (2..=4).contains(&j);
                let expect = if inside { 1.0 / 9.0 } else { 0.0 };
                assert!((y.at(&[0, 0, i, j]) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn conv_rejects_oversized_kernel_and_even_same() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        let conv = Conv2d::new(Tensor::zeros(&[1, 1, 5, 5]), None, 1, Padding::Valid).unwrap();
        assert!(matches!(conv.forward(&x), Err(Error::Dimension(_))));
        assert!(Conv2d::new(Tensor::zeros(&[1, 1, 2, 2]), None, 1, Padding::Same).is_err());
    }

    #[test]
    fn strided_valid_conv_shape() {
        let x = Tensor::ones(&[1, 2, 9, 9]);
        let mut conv = Conv2d::new(Tensor::ones(&[4, 2, 3, 3]), None, 1, Padding::Valid).unwrap();
        conv.stride = 2;
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 4, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 18.0));
    }

    #[test]
    fn linear_over_channels() {
        let x = Tensor::from_fn(&[1, 2, 2, 2], |i| (i[1] * 4 + i[2] * 2 + i[3]) as f64);
        let lin = Linear::new(
            Tensor::from_vec(&[2, 1], vec![1.0, -1.0]).unwrap(),
            Some(Tensor::scalar(0.5)),
        )
        .unwrap();
        let y = lin.forward_channels(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == -3.5));
    }

    #[test]
    fn bilinear_constant_and_corners() {
        let c = Tensor::full(&[1, 2, 3, 2], 0.7);
        let up = resize_bilinear(&c, 9, 5).unwrap();
        assert!(up.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));

        let x = Tensor::from_fn(&[1, 1, 3, 4], |i| (i[2] * 4 + i[3]) as f64 * 1.5 - 2.0);
        let up = resize_bilinear(&x, 7, 10).unwrap();
        assert_eq!(up.at(&[0, 0, 0, 0]), x.at(&[0, 0, 0, 0]));
        assert_eq!(up.at(&[0, 0, 0, 9]), x.at(&[0, 0, 0, 3]));
        assert_eq!(up.at(&[0, 0, 6, 0]), x.at(&[0, 0, 2, 0]));
        assert_eq!(up.at(&[0, 0, 6, 9]), x.at(&[0, 0, 2, 3]));
        // Affine input is reproduced exactly by linear interpolation.
        assert!((up.at(&[0, 0, 3, 3]) - (1.0 * 4.0 + 1.0) * 1.5 + 2.0).abs() < 1e-12);
    }
}
