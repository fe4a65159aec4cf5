//! End-to-end forward pass: encoder → per-scale FSEC → GMIA → SVCA → heads.

use crate::attention::Window;
use crate::blocks::{fsec, gmia, svca, EnhancedPair, FsecConfig, FsecParams, FusedFeature, GmiaParams, SvcaParams};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::image::ImagePair;
use crate::losses::{focal_loss, fusion_loss, iou_loss, total_loss, LossReport};
use crate::rng::ParamSet;
use crate::tensor::Tensor;

use super::encoder::EncoderStub;
use super::heads::{fusion_head, segmentation_head, FusedImage, FusionHeadParams, SegHeadParams, SegMap};

/// All frozen weights of one pipeline instance.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineParams {
    pub encoder: EncoderStub,
    pub fsec: Vec<FsecParams>,
    pub gmia: Vec<GmiaParams>,
    pub svca: Vec<SvcaParams>,
    pub seg: SegHeadParams,
    pub fusion: FusionHeadParams,
}

impl PipelineParams {
    pub fn init(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let ps = ParamSet::new(cfg.seed);
        let fsec_cfg = FsecConfig {
            window: Window {
                height: cfg.window,
                width: cfg.window,
            },
            swap_enhance_base: cfg.swap_enhance_base,
            gate_override: None,
        };
        let mut fsec = Vec::with_capacity(4);
        let mut gmia = Vec::with_capacity(4);
        let mut svca = Vec::with_capacity(4);
        for (i, &c) in cfg.channels.iter().enumerate() {
            let sp = ps.child(&format!("scale{i}"));
            fsec.push(FsecParams::init(&sp.child("fsec"), c, cfg.state_dim, fsec_cfg.clone()));
            gmia.push(GmiaParams::init(&sp.child("gmia"), c, cfg.heads)?);
            svca.push(SvcaParams::init(&sp.child("svca"), c)?);
        }
        Ok(PipelineParams {
            encoder: EncoderStub::new(&ps.child("encoder"), cfg.channels),
            fsec,
            gmia,
            svca,
            seg: SegHeadParams::init(&ps.child("seg_head"), &cfg.channels, cfg.seg_width, cfg.classes),
            fusion: FusionHeadParams::init(&ps.child("fusion_head"), &cfg.channels),
        })
    }
}

/// Intermediate features of one scale.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleOutput {
    pub enhanced: EnhancedPair,
    pub fused: FusedFeature,
    /// SVCA output in token form.
    pub consistent: FusedFeature,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub seg: SegMap,
    pub fused: FusedImage,
    pub scales: Vec<ScaleOutput>,
}

#[derive(Clone, Debug)]
pub struct Pipeline {
    config: PipelineConfig,
    params: PipelineParams,
}

/// Runs FSEC on maps of any size by edge-padding to a multiple of 4 and
/// cropping the result back.
fn fsec_any_size(xv: &Tensor, xi: &Tensor, p: &FsecParams) -> Result<EnhancedPair> {
    let [_, _, h, w] = xv.dims4()?;
    let (ph, pw) = (h.next_multiple_of(4), w.next_multiple_of(4));
    if (ph, pw) == (h, w) {
        return fsec(xv, xi, p);
    }
    let e = fsec(&xv.pad_replicate(ph, pw)?, &xi.pad_replicate(ph, pw)?, p)?;
    Ok(EnhancedPair {
        ev: e.ev.crop(h, w)?,
        ei: e.ei.crop(h, w)?,
    })
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        let params = PipelineParams::init(&config)?;
        Ok(Pipeline { config, params })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn params(&self) -> &PipelineParams {
        &self.params
    }

    pub fn run(&self, pair: &ImagePair) -> Result<PipelineOutput> {
        let feats = self.params.encoder.encode(pair)?;
        let mut scales = Vec::with_capacity(4);
        for s in 0..4 {
            let enhanced = fsec_any_size(&feats.visible[s], &feats.infrared[s], &self.params.fsec[s])?;
            let fused = gmia(&enhanced.ev, &enhanced.ei, &self.params.gmia[s])?.fused;
            let out = svca(&fused, &self.params.svca[s])?;
            let consistent = FusedFeature {
                tokens: out.to_tokens()?,
                height: fused.height,
                width: fused.width,
            };
            scales.push(ScaleOutput {
                enhanced,
                fused,
                consistent,
            });
        }
        let tokens: Vec<FusedFeature> = scales.iter().map(|s| s.consistent.clone()).collect();
        let seg = segmentation_head(&tokens, (pair.height(), pair.width()), &self.params.seg)?;
        let ev: Vec<Tensor> = scales.iter().map(|s| s.enhanced.ev.clone()).collect();
        let ei: Vec<Tensor> = scales.iter().map(|s| s.enhanced.ei.clone()).collect();
        let fused = fusion_head(&ev, &ei, pair, &self.params.fusion)?;
        Ok(PipelineOutput { seg, fused, scales })
    }

    /// Loss stack against the pair's ground-truth mask.
    pub fn losses(&self, out: &PipelineOutput, pair: &ImagePair) -> Result<LossReport> {
        let mask = pair
            .mask
            .as_ref()
            .ok_or_else(|| Error::Config("losses need a ground-truth mask".into()))?;
        let focal = focal_loss(&out.seg.logits, mask, self.config.focal())?;
        let iou = iou_loss(&out.seg.probabilities()?, mask, self.config.iou_eps)?;
        let fus = fusion_loss(
            &out.fused.pixels,
            &pair.visible_gray(),
            &pair.infrared,
            self.config.fusion_weights(),
        )?;
        let mut report = total_loss(focal.value, iou.value, fus.value);
        report.gradients.insert("focal".into(), focal.grad);
        report.gradients.insert("iou".into(), iou.grad);
        report.gradients.insert("fus".into(), fus.grad);
        Ok(report)
    }
}
