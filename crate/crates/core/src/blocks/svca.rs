//! Semantic-visual consistency attention.
//!
//! Direction-aware recalibration: the map is pooled along each spatial axis,
//! the channels are split into four groups filtered by depthwise 1-D kernels
//! of sizes 3/5/7/9 (edge-replicated, so constant profiles stay constant),
//! group-normalized and squashed into `M^h` / `M^w`. Then
//! `X' = X ⊙ M^h ⊙ M^w`, followed by a gated channel self-attention over
//! per-channel descriptors:
//!
//! ```text
//! p = mean_hw(X')            q = p W_q, k = p W_k
//! A[i, j] = softmax_j(q_i k_j)
//! F = X' + sigmoid(p W_g) ⊙ (A X')
//! ```

use super::gmia::FusedFeature;
use crate::error::{Error, Result};
use crate::rng::ParamSet;
use crate::tensor::{Conv2d, Linear, NormAffine, Padding, PoolKind, Tensor};

pub const SVCA_KERNELS: [usize; 4] = [3, 5, 7, 9];
const GN_GROUPS: usize = 4;
const GN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct SvcaParams {
    /// One depthwise `1 × k` conv per channel group, along the height axis.
    pub conv_h: Vec<Conv2d>,
    pub conv_w: Vec<Conv2d>,
    pub norm_h: NormAffine,
    pub norm_w: NormAffine,
    pub query: Linear,
    pub key: Linear,
    pub gate: Linear,
}

fn check_channels(c: usize) -> Result<usize> {
    if c == 0 || !c.is_multiple_of(GN_GROUPS) {
        return Err(Error::Config(format!(
            "{c} channels do not split into {GN_GROUPS} groups"
        )));
    }
    Ok(c / GN_GROUPS)
}

fn delta_1d(channels: usize, k: usize) -> Conv2d {
    let mut w = Tensor::zeros(&[channels, 1, 1, k]);
    for c in 0..channels {
        w.set(&[c, 0, 0, k / 2], 1.0);
    }
    Conv2d::new(w, None, channels, Padding::Valid).expect("valid delta conv")
}

impl SvcaParams {
    pub fn init(ps: &ParamSet, channels: usize) -> Result<Self> {
        let g = check_channels(channels)?;
        let convs = |axis: &str| -> Vec<Conv2d> {
            SVCA_KERNELS
                .iter()
                .map(|&k| {
                    let mut conv = ps.conv_rect(&format!("{axis}{k}"), g, g, 1, k, g);
                    conv.padding = Padding::Valid;
                    conv
                })
                .collect()
        };
        Ok(SvcaParams {
            conv_h: convs("conv_h"),
            conv_w: convs("conv_w"),
            norm_h: ps.norm_affine(channels),
            norm_w: ps.norm_affine(channels),
            query: ps.linear("query", channels, channels),
            key: ps.linear("key", channels, channels),
            gate: ps.linear("gate", channels, channels),
        })
    }

    /// Delta kernels, unit affine and zero attention weights.
    pub fn delta(channels: usize) -> Result<Self> {
        let g = check_channels(channels)?;
        let convs: Vec<Conv2d> = SVCA_KERNELS.iter().map(|&k| delta_1d(g, k)).collect();
        Ok(SvcaParams {
            conv_h: convs.clone(),
            conv_w: convs,
            norm_h: NormAffine::identity(channels),
            norm_w: NormAffine::identity(channels),
            query: Linear::zeros(channels, channels),
            key: Linear::zeros(channels, channels),
            gate: Linear::zeros(channels, channels),
        })
    }

    pub fn channels(&self) -> usize {
        self.norm_h.gamma.len()
    }
}

/// Pads the last axis of `[B, C, L]` by `r` copies of each edge value.
fn pad_edges(x: &Tensor, r: usize) -> Result<Tensor> {
    let (b, c, l) = (x.dim(0), x.dim(1), x.dim(2));
    Ok(Tensor::from_fn(&[b, c, l + 2 * r], |i| {
        let j = i[2].saturating_sub(r).min(l - 1);
        x.at(&[i[0], i[1], j])
    }))
}

fn axis_map(pooled: &Tensor, convs: &[Conv2d], norm: &NormAffine) -> Result<Tensor> {
    let g = pooled.dim(1) / GN_GROUPS;
    let groups = pooled.split(1, &[g; GN_GROUPS])?;
    let filtered = groups
        .iter()
        .zip(convs)
        .map(|(t, conv)| conv.forward_1d(&pad_edges(t, conv.weight.dim(3) / 2)?))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor> = filtered.iter().collect();
    let joined = Tensor::concat(&refs, 1)?;
    Ok(norm.apply(&joined.group_norm(GN_GROUPS, GN_EPS)?, 1)?.sigmoid())
}

/// `(M^h [B, C, H], M^w [B, C, W])`, both in `(0, 1)`.
pub fn axis_maps(x: &Tensor, p: &SvcaParams) -> Result<(Tensor, Tensor)> {
    let [b, c, h, w] = x.dims4()?;
    if c != p.channels() {
        return Err(Error::dim(format!("SVCA expects {} channels, got {c}", p.channels())));
    }
    check_channels(c)?;
    let xh = x.pool(PoolKind::Mean, &[3])?.into_shape(&[b, c, h])?;
    let xw = x.pool(PoolKind::Mean, &[2])?.into_shape(&[b, c, w])?;
    Ok((axis_map(&xh, &p.conv_h, &p.norm_h)?, axis_map(&xw, &p.conv_w, &p.norm_w)?))
}

/// `X ⊙ M^h ⊙ M^w` with the axis maps broadcast over the other axis.
pub fn recalibrate(x: &Tensor, m_h: &Tensor, m_w: &Tensor) -> Result<Tensor> {
    let [b, c, h, w] = x.dims4()?;
    x.mul(&m_h.reshape(&[b, c, h, 1])?)?
        .mul(&m_w.reshape(&[b, c, 1, w])?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvcaTrace {
    pub m_h: Tensor,
    pub m_w: Tensor,
    pub recalibrated: Tensor,
    /// `[B, C, C]` channel attention.
    pub attn: Tensor,
    pub out: Tensor,
}

fn channel_self_attention(x: &Tensor, p: &SvcaParams) -> Result<(Tensor, Tensor)> {
    let [b, c, h, w] = x.dims4()?;
    let desc = x.pool(PoolKind::Mean, &[2, 3])?.into_shape(&[b, c])?;
    let q = p.query.forward(&desc)?.into_shape(&[b, c, 1])?;
    let k = p.key.forward(&desc)?.into_shape(&[b, 1, c])?;
    let attn = q.matmul(&k)?.softmax(2)?;
    let ctx = attn.matmul(&x.reshape(&[b, c, h * w])?)?.into_shape(&[b, c, h, w])?;
    let gate = p.gate.forward(&desc)?.sigmoid().into_shape(&[b, c, 1, 1])?;
    Ok((x.add(&ctx.mul(&gate)?)?, attn))
}

pub fn svca_trace(x: &Tensor, p: &SvcaParams) -> Result<SvcaTrace> {
    let (m_h, m_w) = axis_maps(x, p)?;
    let recalibrated = recalibrate(x, &m_h, &m_w)?;
    let (out, attn) = channel_self_attention(&recalibrated, p)?;
    Ok(SvcaTrace {
        m_h,
        m_w,
        recalibrated,
        attn,
        out,
    })
}

pub fn svca_map(x: &Tensor, p: &SvcaParams) -> Result<Tensor> {
    Ok(svca_trace(x, p)?.out)
}

/// SVCA on fused tokens; returns the map form `[B, C, H, W]`.
pub fn svca(f: &FusedFeature, p: &SvcaParams) -> Result<Tensor> {
    svca_map(&f.to_map()?, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn unit_maps_leave_input_bitwise_unchanged() {
        let x = Rng::new(1, 0).uniform_tensor(&[2, 4, 3, 5], -2.0, 2.0);
        let y = recalibrate(&x, &Tensor::ones(&[2, 4, 3]), &Tensor::ones(&[2, 4, 5])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn recalibration_never_amplifies() {
        let p = SvcaParams::init(&ParamSet::new(2), 8).unwrap();
        let x = Rng::new(2, 0).uniform_tensor(&[1, 8, 6, 7], -5.0, 5.0);
        let t = svca_trace(&x, &p).unwrap();
        for (r, v) in t.recalibrated.data().iter().zip(x.data()) {
            assert!(r.abs() <= v.abs());
        }
        for m in [&t.m_h, &t.m_w] {
            assert!(m.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        assert_eq!(t.attn.shape(), &[1, 8, 8]);
        assert_eq!(t.out.shape(), x.shape());
    }

    #[test]
    fn spatially_constant_input_stays_constant() {
        let p = SvcaParams::init(&ParamSet::new(3), 4).unwrap();
        let per_channel = [0.3, -1.2, 0.8, 2.0];
        let x = Tensor::from_fn(&[1, 4, 5, 5], |i| per_channel[i[1]]);
        let y = svca_map(&x, &p).unwrap();
        for ch in 0..4 {
            let v = y.at(&[0, ch, 0, 0]);
            for i in 0..5 {
                for j in 0..5 {
                    assert!((y.at(&[0, ch, i, j]) - v).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn delta_kernels_reduce_to_group_norm_sigmoid() {
        let x = Rng::new(4, 0).uniform_tensor(&[1, 4, 4, 4], -1.0, 1.0);
        let (m_h, m_w) = axis_maps(&x, &SvcaParams::delta(4).unwrap()).unwrap();
        // Four groups of one channel each: normalize every pooled row on its own.
        let oracle = |pooled: &dyn Fn(usize, usize) -> f64| {
            let mut out = vec![0.0; 16];
            for ch in 0..4 {
                let row: Vec<f64> = (0..4).map(|i| pooled(ch, i)).collect();
                let mean = row.iter().sum::<f64>() / 4.0;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
                for i in 0..4 {
                    let z = (row[i] - mean) / (var + GN_EPS).sqrt();
                    out[ch * 4 + i] = 1.0 / (1.0 + (-z).exp());
                }
            }
            out
        };
        let eh = oracle(&|ch, i| (0..4).map(|j| x.at(&[0, ch, i, j])).sum::<f64>() / 4.0);
        let ew = oracle(&|ch, j| (0..4).map(|i| x.at(&[0, ch, i, j])).sum::<f64>() / 4.0);
        for (a, b) in m_h.data().iter().zip(&eh) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in m_w.data().iter().zip(&ew) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_attention_weights_add_half_mean_context() {
        // q = k = 0 makes A uniform; gate 0.5. F = X' + 0.5 * mean_c(X').
        let p = SvcaParams::delta(4).unwrap();
        let x = Rng::new(5, 0).uniform_tensor(&[1, 4, 3, 3], -1.0, 1.0);
        let t = svca_trace(&x, &p).unwrap();
        let r = &t.recalibrated;
        let expect = Tensor::from_fn(&[1, 4, 3, 3], |i| {
            let mean: f64 = (0..4).map(|c| r.at(&[0, c, i[2], i[3]])).sum::<f64>() / 4.0;
            r.at(i) + 0.5 * mean
        });
        assert!(t.out.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn channels_must_split_into_four_groups() {
        assert!(matches!(SvcaParams::init(&ParamSet::new(6), 6), Err(Error::Config(_))));
        assert!(matches!(SvcaParams::delta(0), Err(Error::Config(_))));
    }
}
