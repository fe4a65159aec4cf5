//! Frequency-spatial enhancement with cross-modal complementary gating.
//!
//! Per modality:
//!
//! * frequency branch: 2-level Haar DWT, sub-bands tiled into one map,
//!   `H' = H + SS2D_local(LN(H))`, untiled and inverted to give `X̂`;
//! * spatial branch: `X' = X + SS2D(LN(X)) + CA(LN(X))`;
//! * `Y = Proj_{2C→C}(fft_refine([X', X̂]))`.
//!
//! The two `Y` maps then go through hybrid attention, and
//! `E^V = Y^I + (1 − G) ⊙ M_V ⊙ Y^V`, `E^I = Y^V + (1 − G) ⊙ M_I ⊙ Y^I`.
//! With `swap_enhance_base` the base terms become `Y^V` and `Y^I` instead.

use crate::attention::{
    channel_attention, hybrid_attention, ss2d, ChannelAttnParams, GateMap, HybridAttnParams, HybridOutput,
    ScanParams, Window,
};
use crate::error::{Error, Result};
use crate::freq::{dwt2, fft_refine, idwt2, rearrange_subbands, split_subbands, FftRefineParams};
use crate::rng::ParamSet;
use crate::tensor::{Linear, NormAffine, Tensor};

const DWT_LEVELS: usize = 2;
const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct FsecBranchParams {
    pub freq_norm: NormAffine,
    pub local_scan: ScanParams,
    pub spatial_norm: NormAffine,
    pub global_scan: ScanParams,
    pub channel_attn: ChannelAttnParams,
    /// Operates on the `2C` concatenation `[X', X̂]`.
    pub refine: FftRefineParams,
    /// `2C → C` per-pixel projection after the refinement.
    pub project: Linear,
}

impl FsecBranchParams {
    pub fn init(ps: &ParamSet, channels: usize, state_dim: usize) -> Self {
        FsecBranchParams {
            freq_norm: ps.norm_affine(channels),
            local_scan: ScanParams::init(&ps.child("local_scan"), channels, state_dim),
            spatial_norm: ps.norm_affine(channels),
            global_scan: ScanParams::init(&ps.child("global_scan"), channels, state_dim),
            channel_attn: ChannelAttnParams::init(&ps.child("channel_attn"), channels),
            refine: FftRefineParams::init(&ps.child("refine"), 2 * channels),
            project: ps.linear("project", 2 * channels, channels),
        }
    }

    /// Zero scans, zero channel attention and identity refinement, keeping
    /// the given projection.
    pub fn identity(channels: usize, state_dim: usize, project: Linear) -> Self {
        FsecBranchParams {
            freq_norm: NormAffine::identity(channels),
            local_scan: ScanParams::zeros(channels, state_dim),
            spatial_norm: NormAffine::identity(channels),
            global_scan: ScanParams::zeros(channels, state_dim),
            channel_attn: ChannelAttnParams::zeros(channels),
            refine: FftRefineParams::identity(2 * channels),
            project,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FsecConfig {
    /// Local scan window; clamped to the map when the map is smaller.
    pub window: Window,
    pub swap_enhance_base: bool,
    /// Replaces the learned gate `G` by a constant (endpoint checks).
    pub gate_override: Option<f64>,
}

impl Default for FsecConfig {
    fn default() -> Self {
        FsecConfig {
            window: Window { height: 4, width: 4 },
            swap_enhance_base: false,
            gate_override: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FsecParams {
    pub visible: FsecBranchParams,
    pub infrared: FsecBranchParams,
    pub hybrid: HybridAttnParams,
    pub config: FsecConfig,
}

impl FsecParams {
    pub fn init(ps: &ParamSet, channels: usize, state_dim: usize, config: FsecConfig) -> Self {
        FsecParams {
            visible: FsecBranchParams::init(&ps.child("visible"), channels, state_dim),
            infrared: FsecBranchParams::init(&ps.child("infrared"), channels, state_dim),
            hybrid: HybridAttnParams::init(&ps.child("hybrid"), channels),
            config,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnhancedPair {
    pub ev: Tensor,
    pub ei: Tensor,
}

/// Intermediate maps of one FSEC evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct FsecTrace {
    pub yv: Tensor,
    pub yi: Tensor,
    pub hybrid: HybridOutput,
    pub enhanced: EnhancedPair,
}

fn norm_channels(x: &Tensor, affine: &NormAffine) -> Result<Tensor> {
    affine.apply(&x.layer_norm(1, LN_EPS)?, 1)
}

fn effective_window(win: Window, h: usize, w: usize) -> Window {
    Window {
        height: win.height.min(h),
        width: win.width.min(w),
    }
}

/// `X̂`: wavelet sub-bands enhanced by a windowed scan, then resynthesized.
pub fn frequency_branch(x: &Tensor, p: &FsecBranchParams, window: Window) -> Result<Tensor> {
    let [_, _, h, w] = x.dims4()?;
    let tiled = rearrange_subbands(&dwt2(x, DWT_LEVELS)?)?;
    let win = effective_window(window, h, w);
    let scanned = ss2d(&norm_channels(&tiled, &p.freq_norm)?, &p.local_scan, Some(win))?;
    idwt2(&split_subbands(&tiled.add(&scanned)?, DWT_LEVELS)?)
}

/// `X' = X + SS2D(LN(X)) + CA(LN(X))`.
pub fn spatial_branch(x: &Tensor, p: &FsecBranchParams) -> Result<Tensor> {
    let normed = norm_channels(x, &p.spatial_norm)?;
    x.add(&ss2d(&normed, &p.global_scan, None)?)?
        .add(&channel_attention(&normed, &p.channel_attn)?)
}

fn enhance_modality(x: &Tensor, p: &FsecBranchParams, window: Window) -> Result<Tensor> {
    let x_hat = frequency_branch(x, p, window)?;
    let x_prime = spatial_branch(x, p)?;
    let refined = fft_refine(&Tensor::concat(&[&x_prime, &x_hat], 1)?, &p.refine)?;
    p.project.forward_channels(&refined)
}

/// Cross-modal complementary combination of the two enhanced streams.
pub fn combine_enhanced(
    yv: &Tensor,
    yi: &Tensor,
    hybrid: &HybridOutput,
    swap_enhance_base: bool,
) -> Result<EnhancedPair> {
    let open = hybrid.gate.values().map(|g| 1.0 - g);
    let mod_v = hybrid.m_vis.values().mul(yv)?.mul(&open)?;
    let mod_i = hybrid.m_ir.values().mul(yi)?.mul(&open)?;
    let (base_v, base_i) = if swap_enhance_base { (yv, yi) } else { (yi, yv) };
    Ok(EnhancedPair {
        ev: base_v.add(&mod_v)?,
        ei: base_i.add(&mod_i)?,
    })
}

pub fn fsec_trace(xv: &Tensor, xi: &Tensor, p: &FsecParams) -> Result<FsecTrace> {
    if xv.shape() != xi.shape() {
        return Err(Error::dim(format!(
            "modalities differ in shape: {:?} vs {:?}",
            xv.shape(),
            xi.shape()
        )));
    }
    let [b, c, h, w] = xv.dims4()?;
    let m = 1 << DWT_LEVELS;
    if h % m != 0 || w % m != 0 {
        return Err(Error::dim(format!(
            "FSEC needs spatial dims divisible by {m}, got {h}x{w}"
        )));
    }
    let yv = enhance_modality(xv, &p.visible, p.config.window)?;
    let yi = enhance_modality(xi, &p.infrared, p.config.window)?;
    let mut hybrid = hybrid_attention(&yi, &yv, &p.hybrid)?;
    if let Some(g) = p.config.gate_override {
        hybrid.gate = GateMap::constant(&[b, c, 1, 1], g)?;
    }
    let enhanced = combine_enhanced(&yv, &yi, &hybrid, p.config.swap_enhance_base)?;
    Ok(FsecTrace {
        yv,
        yi,
        hybrid,
        enhanced,
    })
}

pub fn fsec(xv: &Tensor, xi: &Tensor, p: &FsecParams) -> Result<EnhancedPair> {
    Ok(fsec_trace(xv, xi, p)?.enhanced)
}
