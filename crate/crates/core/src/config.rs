//! Run configuration: every free constant of the pipeline in one flat record.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{FocalParams, FusionLossWeights, DEFAULT_IOU_EPS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Feature width of each of the four encoder stages.
    pub channels: [usize; 4],
    pub heads: usize,
    /// State size of the selective scans.
    pub state_dim: usize,
    /// Side of the square local-scan window in the frequency branch.
    pub window: usize,
    pub classes: usize,
    /// Common projection width in the segmentation head.
    pub seg_width: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub iou_eps: f64,
    pub swap_enhance_base: bool,
    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let focal = FocalParams::default();
        let fus = FusionLossWeights::default();
        PipelineConfig {
            seed: 0,
            height: 64,
            width: 64,
            channels: [16, 16, 32, 32],
            heads: 4,
            state_dim: 4,
            window: 4,
            classes: 5,
            seg_width: 64,
            alpha: focal.alpha,
            gamma: focal.gamma,
            beta1: fus.beta1,
            beta2: fus.beta2,
            beta3: fus.beta3,
            iou_eps: DEFAULT_IOU_EPS,
            swap_enhance_base: false,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn focal(&self) -> FocalParams {
        FocalParams {
            alpha: self.alpha,
            gamma: self.gamma,
        }
    }

    pub fn fusion_weights(&self) -> FusionLossWeights {
        FusionLossWeights {
            beta1: self.beta1,
            beta2: self.beta2,
            beta3: self.beta3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(32) || !self.width.is_multiple_of(32) {
            return fail(format!("image size {}x{} must be a positive multiple of 32", self.height, self.width));
        }
        if self.heads == 0 {
            return fail("head count must be positive".into());
        }
        for c in self.channels {
            if c == 0 || c % 4 != 0 || c % self.heads != 0 {
                return fail(format!("{c} channels must be divisible by 4 and by {} heads", self.heads));
            }
        }
        if self.state_dim == 0 || self.window == 0 || self.classes == 0 || self.seg_width == 0 {
            return fail("state_dim, window, classes and seg_width must be positive".into());
        }
        if !(self.iou_eps >= 0.0) {
            return fail("iou_eps must be nonnegative".into());
        }
        self.focal().validate()?;
        self.fusion_weights().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_roundtrip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(PipelineConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = PipelineConfig::from_json(r#"{"seed": 7, "height": 96}"#).unwrap();
        assert_eq!((c.seed, c.height, c.width), (7, 96, 64));
    }

    #[test]
    fn invalid_settings_rejected() {
        assert!(PipelineConfig::from_json(r#"{"height": 40}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"channels": [16, 16, 30, 32]}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"heads": 3}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"beta2": -1.0}"#).is_err());
        assert!(matches!(PipelineConfig::from_json(r#"{"sede": 1}"#), Err(Error::Json(_))));
    }
}
