use crate::error::{Error, Result};
use crate::rng::ParamSet;
use crate::tensor::{Conv2d, Linear, Padding, PoolKind, Tensor};

/// Tensor whose entries are all in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GateMap(Tensor);

impl GateMap {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.data().iter().all(|v| (0.0..=1.0).contains(v)) {
            Ok(GateMap(values))
        } else {
            Err(Error::Config("gate values outside [0, 1]".into()))
        }
    }

    /// Constant gate, e.g. for forcing an endpoint.
    pub fn constant(shape: &[usize], value: f64) -> Result<Self> {
        Self::new(Tensor::full(shape, value))
    }

    pub fn values(&self) -> &Tensor {
        &self.0
    }
}

/// Squeeze-and-excitation bottleneck `C → C/4 → C`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAttnParams {
    pub squeeze: Linear,
    pub expand: Linear,
}

fn bottleneck(c: usize) -> usize {
    (c / 4).max(1)
}

impl ChannelAttnParams {
    pub fn init(ps: &ParamSet, channels: usize) -> Self {
        let r = bottleneck(channels);
        ChannelAttnParams {
            squeeze: ps.linear("squeeze", channels, r),
            expand: ps.linear("expand", r, channels),
        }
    }

    pub fn zeros(channels: usize) -> Self {
        let r = bottleneck(channels);
        ChannelAttnParams {
            squeeze: Linear::zeros(channels, r),
            expand: Linear::zeros(r, channels),
        }
    }
}

/// Per-channel rescaling by `sigmoid(expand(relu(squeeze(mean_hw(x)))))`.
pub fn channel_attention(x: &Tensor, p: &ChannelAttnParams) -> Result<Tensor> {
    let [b, c, _, _] = x.dims4()?;
    let pooled = x.pool(PoolKind::Mean, &[2, 3])?.into_shape(&[b, c])?;
    let hidden = p.squeeze.forward(&pooled)?.relu();
    let gate = p.expand.forward(&hidden)?.sigmoid();
    x.mul(&gate.into_shape(&[b, c, 1, 1])?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridAttnParams {
    /// Shared bottleneck applied to both avg- and max-pooled statistics
    /// of the `2C`-channel concatenation.
    pub mlp_in: Linear,
    pub mlp_out: Linear,
    /// `7×7` convolution from the `[mean, max]` channel maps to one map.
    pub spatial: Conv2d,
    /// `2C → C` projection of the concatenated channel means.
    pub gate: Linear,
}

impl HybridAttnParams {
    pub fn init(ps: &ParamSet, channels: usize) -> Self {
        let c2 = 2 * channels;
        let r = bottleneck(c2);
        HybridAttnParams {
            mlp_in: ps.linear("mlp_in", c2, r),
            mlp_out: ps.linear("mlp_out", r, c2),
            spatial: ps.conv("spatial", 1, 2, 7, 1),
            gate: ps.linear("gate", c2, channels),
        }
    }

    pub fn zeros(channels: usize) -> Self {
        let c2 = 2 * channels;
        let r = bottleneck(c2);
        HybridAttnParams {
            mlp_in: Linear::zeros(c2, r),
            mlp_out: Linear::zeros(r, c2),
            spatial: Conv2d::new(Tensor::zeros(&[1, 2, 7, 7]), None, 1, Padding::Same).expect("valid conv"),
            gate: Linear::zeros(c2, channels),
        }
    }
}

/// Hybrid channel-spatial attention over `[Y^I, Y^V]`.
///
/// `m_ir` and `m_vis` are the halves of `M = W_c ⊙ W_s` aligned with the
/// infrared and visible channels respectively; `gate` is `[B, C, 1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridOutput {
    pub m_vis: GateMap,
    pub m_ir: GateMap,
    pub gate: GateMap,
}

impl HybridOutput {
    /// `M` as a `[2, B, C, H, W]` stack; slice 0 modulates the visible stream.
    pub fn stacked(&self) -> Result<Tensor> {
        let v = self.m_vis.values();
        let mut shape = vec![1];
        shape.extend_from_slice(v.shape());
        Tensor::concat(
            &[&v.reshape(&shape)?, &self.m_ir.values().reshape(&shape)?],
            0,
        )
    }
}

pub fn hybrid_attention(yi: &Tensor, yv: &Tensor, p: &HybridAttnParams) -> Result<HybridOutput> {
    if yi.shape() != yv.shape() {
        return Err(Error::dim(format!(
            "hybrid attention inputs differ: {:?} vs {:?}",
            yi.shape(),
            yv.shape()
        )));
    }
    let [b, c, h, w] = yi.dims4()?;
    let z = Tensor::concat(&[yi, yv], 1)?;

    let avg = z.pool(PoolKind::Mean, &[2, 3])?.into_shape(&[b, 2 * c])?;
    let max = z.pool(PoolKind::Max, &[2, 3])?.into_shape(&[b, 2 * c])?;
    let mlp = |t: &Tensor| -> Result<Tensor> { p.mlp_out.forward(&p.mlp_in.forward(t)?.relu()) };
    let w_c = mlp(&avg)?.add(&mlp(&max)?)?.sigmoid().into_shape(&[b, 2 * c, 1, 1])?;

    let stats = Tensor::concat(
        &[&z.pool(PoolKind::Mean, &[1])?, &z.pool(PoolKind::Max, &[1])?],
        1,
    )?;
    let w_s = p.spatial.forward(&stats)?.sigmoid();
    if w_s.shape() != [b, 1, h, w] {
        return Err(Error::dim("spatial attention must map to a single channel"));
    }

    let m = Tensor::ones(&[b, 2 * c, h, w]).mul(&w_c)?.mul(&w_s)?;
    let halves = m.split(1, &[c, c])?;
    let gate = p.gate.forward(&avg)?.sigmoid().into_shape(&[b, c, 1, 1])?;
    Ok(HybridOutput {
        m_ir: GateMap::new(halves[0].clone())?,
        m_vis: GateMap::new(halves[1].clone())?,
        gate: GateMap::new(gate)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn zeroed_channel_attention_halves_input() {
        let x = Rng::new(1, 0).uniform_tensor(&[2, 8, 3, 3], -1.0, 1.0);
        let y = channel_attention(&x, &ChannelAttnParams::zeros(8)).unwrap();
        assert_eq!(y, x.scale(0.5));
    }

    #[test]
    fn channel_attention_is_per_channel_scaling() {
        let p = ChannelAttnParams::init(&ParamSet::new(2), 8);
        let x = Rng::new(2, 0).uniform_tensor(&[1, 8, 4, 5], 0.5, 1.5);
        let y = channel_attention(&x, &p).unwrap();
        for ch in 0..8 {
            let r0 = y.at(&[0, ch, 0, 0]) / x.at(&[0, ch, 0, 0]);
            for i in 0..4 {
                for j in 0..5 {
                    let r = y.at(&[0, ch, i, j]) / x.at(&[0, ch, i, j]);
                    assert!((r - r0).abs() < 1e-12);
                }
            }
        }
        let c = Tensor::full(&[1, 8, 3, 3], 0.3);
        let yc = channel_attention(&c, &p).unwrap();
        for ch in 0..8 {
            let v = yc.at(&[0, ch, 0, 0]);
            assert!((0..9).all(|k| yc.at(&[0, ch, k / 3, k % 3]) == v));
        }
    }

    #[test]
    fn zeroed_hybrid_gives_quarter_and_half() {
        let yi = Rng::new(3, 0).uniform_tensor(&[1, 4, 6, 6], -1.0, 1.0);
        let yv = Rng::new(3, 1).uniform_tensor(&[1, 4, 6, 6], -1.0, 1.0);
        let out = hybrid_attention(&yi, &yv, &HybridAttnParams::zeros(4)).unwrap();
        assert!(out.m_vis.values().data().iter().all(|&v| v == 0.25));
        assert!(out.m_ir.values().data().iter().all(|&v| v == 0.25));
        assert!(out.gate.values().data().iter().all(|&v| v == 0.5));
        assert_eq!(out.stacked().unwrap().shape(), &[2, 1, 4, 6, 6]);
    }

    #[test]
    fn hybrid_bounded_and_sensitive_to_both_inputs() {
        let p = HybridAttnParams::init(&ParamSet::new(4), 4);
        let yi = Rng::new(4, 0).uniform_tensor(&[1, 4, 6, 6], -3.0, 3.0);
        let yv = Rng::new(4, 1).uniform_tensor(&[1, 4, 6, 6], -3.0, 3.0);
        let out = hybrid_attention(&yi, &yv, &p).unwrap();
        for g in [&out.m_vis, &out.m_ir, &out.gate] {
            assert!(g.values().data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let zeroed = hybrid_attention(&yi, &Tensor::zeros(yv.shape()), &p).unwrap();
        assert!(zeroed.m_ir.values().max_abs_diff(out.m_ir.values()) > 1e-6);
    }

    #[test]
    fn swapping_inputs_swaps_slices_for_symmetric_bottleneck() {
        // Half-swap equivariant bottleneck: W_in = [[A, B], [B, A]], W_out = [[P, Q], [Q, P]].
        let c = 3;
        let r = 2; // per-half hidden width
        let mut rng = Rng::new(5, 0);
        let a = rng.uniform_tensor(&[c, r], -1.0, 1.0);
        let b = rng.uniform_tensor(&[c, r], -1.0, 1.0);
        let pm = rng.uniform_tensor(&[r, c], -1.0, 1.0);
        let q = rng.uniform_tensor(&[r, c], -1.0, 1.0);
        let block = |x: &Tensor, y: &Tensor| {
            let top = Tensor::concat(&[x, y], 1).unwrap();
            let bot = Tensor::concat(&[y, x], 1).unwrap();
            Tensor::concat(&[&top, &bot], 0).unwrap()
        };
        let mut p = HybridAttnParams::init(&ParamSet::new(5), c);
        p.mlp_in = Linear::new(block(&a, &b), None).unwrap();
        p.mlp_out = Linear::new(block(&pm, &q), None).unwrap();
        let yi = rng.uniform_tensor(&[1, c, 5, 5], -1.0, 1.0);
        let yv = rng.uniform_tensor(&[1, c, 5, 5], -1.0, 1.0);
        let fwd = hybrid_attention(&yi, &yv, &p).unwrap();
        let swp = hybrid_attention(&yv, &yi, &p).unwrap();
        assert!(fwd.m_vis.values().max_abs_diff(swp.m_ir.values()) < 1e-12);
        assert!(fwd.m_ir.values().max_abs_diff(swp.m_vis.values()) < 1e-12);
    }

    #[test]
    fn hybrid_rejects_shape_mismatch() {
        let p = HybridAttnParams::zeros(2);
        let r = hybrid_attention(&Tensor::zeros(&[1, 2, 4, 4]), &Tensor::zeros(&[1, 2, 4, 2]), &p);
        assert!(matches!(r, Err(Error::Dimension(_))));
    }
}
