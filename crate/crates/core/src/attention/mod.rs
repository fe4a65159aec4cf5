//! Attention and scan primitives shared by the enhancement and fusion blocks.

mod channel;
mod gated;
mod scan;

pub use channel::{
    channel_attention, hybrid_attention, ChannelAttnParams, GateMap, HybridAttnParams, HybridOutput,
};
pub use gated::{
    gated_cross_attention, gated_self_attention, AttnOutput, CrossAttnParams, SelfAttnParams,
};
pub use scan::{scan_direction, ss2d, ScanDirection, ScanParams, Window};
