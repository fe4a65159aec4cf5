//! Per-scale enhancement, interaction and consistency blocks.

mod fsec;
mod gmia;
mod svca;

pub use fsec::{
    combine_enhanced, frequency_branch, fsec, fsec_trace, spatial_branch, EnhancedPair, FsecBranchParams,
    FsecConfig, FsecParams, FsecTrace,
};
pub use gmia::{gmia, FusedFeature, GmiaOutput, GmiaParams};
pub use svca::{axis_maps, recalibrate, svca, svca_map, svca_trace, SvcaParams, SvcaTrace, SVCA_KERNELS};
