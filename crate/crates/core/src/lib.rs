//! Forward pipeline and loss stack for joint infrared-visible maritime image
//! fusion and segmentation, at desk scale and in double precision.

pub mod attention;
pub mod blocks;
pub mod config;
pub mod error;
pub mod freq;
pub mod image;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use image::ImagePair;
pub use model::Pipeline;
pub use tensor::Tensor;
