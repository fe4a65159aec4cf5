//! Gated modality-interactive attention.
//!
//! Each enhanced map is tokenized and refined by gated self-attention; the
//! refined streams then query each other (`V ← I` and `I ← V`) through gated
//! cross-attention, and the two results are fused by a `2C → C` projection of
//! `[F^I, F^V]`.

use crate::attention::{gated_cross_attention, gated_self_attention, CrossAttnParams, SelfAttnParams};
use crate::error::{Error, Result};
use crate::rng::ParamSet;
use crate::tensor::{Linear, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct GmiaParams {
    pub self_vis: SelfAttnParams,
    pub self_ir: SelfAttnParams,
    /// Visible queries, infrared keys/values.
    pub cross_vis: CrossAttnParams,
    /// Infrared queries, visible keys/values.
    pub cross_ir: CrossAttnParams,
    pub fuse: Linear,
}

impl GmiaParams {
    pub fn init(ps: &ParamSet, channels: usize, heads: usize) -> Result<Self> {
        Ok(GmiaParams {
            self_vis: SelfAttnParams::init(&ps.child("self_vis"), channels, heads)?,
            self_ir: SelfAttnParams::init(&ps.child("self_ir"), channels, heads)?,
            cross_vis: CrossAttnParams::init(&ps.child("cross_vis"), channels, heads)?,
            cross_ir: CrossAttnParams::init(&ps.child("cross_ir"), channels, heads)?,
            fuse: ps.linear("fuse", 2 * channels, channels),
        })
    }

    /// Both modalities share their attention weights.
    pub fn init_shared(ps: &ParamSet, channels: usize, heads: usize) -> Result<Self> {
        let self_attn = SelfAttnParams::init(&ps.child("self"), channels, heads)?;
        let cross = CrossAttnParams::init(&ps.child("cross"), channels, heads)?;
        Ok(GmiaParams {
            self_vis: self_attn.clone(),
            self_ir: self_attn,
            cross_vis: cross.clone(),
            cross_ir: cross,
            fuse: ps.linear("fuse", 2 * channels, channels),
        })
    }
}

/// Fused tokens together with the map geometry they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedFeature {
    /// `[B, H·W, C]`.
    pub tokens: Tensor,
    pub height: usize,
    pub width: usize,
}

impl FusedFeature {
    pub fn to_map(&self) -> Result<Tensor> {
        self.tokens.from_tokens(self.height, self.width)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmiaOutput {
    pub fused: FusedFeature,
    /// Cross-attended visible tokens `F^V`.
    pub f_v: Tensor,
    /// Cross-attended infrared tokens `F^I`.
    pub f_i: Tensor,
}

pub fn gmia(ev: &Tensor, ei: &Tensor, p: &GmiaParams) -> Result<GmiaOutput> {
    if ev.shape() != ei.shape() {
        return Err(Error::dim(format!(
            "modalities differ in shape: {:?} vs {:?}",
            ev.shape(),
            ei.shape()
        )));
    }
    let [_, _, h, w] = ev.dims4()?;
    let sv = gated_self_attention(&ev.to_tokens()?, &p.self_vis)?.out;
    let si = gated_self_attention(&ei.to_tokens()?, &p.self_ir)?.out;
    let f_v = gated_cross_attention(&sv, &si, &p.cross_vis)?.out;
    let f_i = gated_cross_attention(&si, &sv, &p.cross_ir)?.out;
    let tokens = p.fuse.forward(&Tensor::concat(&[&f_i, &f_v], 2)?)?;
    Ok(GmiaOutput {
        fused: FusedFeature {
            tokens,
            height: h,
            width: w,
        },
        f_v,
        f_i,
    })
}
