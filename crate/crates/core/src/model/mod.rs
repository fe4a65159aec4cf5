//! Frozen encoder, decoding heads and the assembled pipeline.

mod encoder;
mod heads;
mod pipeline;

pub use encoder::{patch_means, EncoderStub, ModalityFeatures, STAGE_STRIDES};
pub use heads::{
    decode_scales, fusion_head, segmentation_head, FusedImage, FusionHeadParams, SegHeadParams, SegMap,
    FUSION_HIDDEN, FUSION_WIDTH, SCALES,
};
pub use pipeline::{Pipeline, PipelineOutput, PipelineParams, ScaleOutput};
