//! Procedural registered infrared/visible maritime scenes with class masks,
//! under four scene conditions.

mod dataset;
mod degrade;
mod scene;

pub use dataset::{
    generate_dataset, generate_samples, load_entry, sample_spec, GenConfig, Manifest, ManifestEntry, SampleFiles,
    MANIFEST_FILE,
};
pub use degrade::{degrade, fog, glare, low_light, soften_infrared, AIRLIGHT};
pub use scene::{point_in_polygon, render_clean, LabeledSample, Regime, SceneSpec, Vessel, VesselClass, MIN_BEAM};
