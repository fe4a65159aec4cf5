//! Batch generation and on-disk layout with a hashed manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::degrade::degrade;
use super::scene::{render_clean, LabeledSample, Regime, SceneSpec};
use crate::error::{Error, Result};
use crate::image::ImagePair;
use crate::io::{encode_image, read_image, ImageKind};
use crate::rng::{derive_seed, Rng};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Fixed regime for every sample; cycles through all four when unset.
    pub regime: Option<Regime>,
    /// Fixed strength; drawn from `[0.3, 1.0]` per sample when unset.
    pub strength: Option<f64>,
    pub ir_noise: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            height: 64,
            width: 64,
            regime: None,
            strength: None,
            ir_noise: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFiles {
    pub visible: String,
    pub infrared: String,
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub seed: u64,
    pub spec: SceneSpec,
    pub files: SampleFiles,
    pub sha256: SampleFiles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub master_seed: u64,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Scene spec of sample `index`, a pure function of the config.
pub fn sample_spec(cfg: &GenConfig, index: usize) -> SceneSpec {
    let seed = derive_seed(cfg.seed, index as u64);
    let regime = cfg.regime.unwrap_or(Regime::ALL[index % Regime::ALL.len()]);
    let strength = cfg
        .strength
        .unwrap_or_else(|| Rng::for_label(seed, "strength").uniform(0.3, 1.0));
    let mut spec = SceneSpec::random(seed, cfg.height, cfg.width, regime, strength);
    spec.ir_noise = cfg.ir_noise;
    spec
}

pub fn generate_samples(n: usize, cfg: &GenConfig) -> Result<Vec<LabeledSample>> {
    if n == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    (0..n).map(|i| Ok(degrade(&render_clean(&sample_spec(cfg, i))?))).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Generates `n` samples into `dir` as `sample_XXXX_{vis.ppm, ir.pgm, mask.pgm}`
/// plus `manifest.json`.
pub fn generate_dataset(n: usize, cfg: &GenConfig, dir: &Path) -> Result<(Vec<LabeledSample>, Manifest)> {
    let samples = generate_samples(n, cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(n);
    for (index, sample) in samples.iter().enumerate() {
        let stem = format!("sample_{index:04}");
        let files = SampleFiles {
            visible: format!("{stem}_vis.ppm"),
            infrared: format!("{stem}_ir.pgm"),
            mask: format!("{stem}_mask.pgm"),
        };
        let blobs = [
            (&files.visible, encode_image(&sample.pair.visible, ImageKind::PpmRgb)?),
            (&files.infrared, encode_image(&sample.pair.infrared, ImageKind::PgmGray)?),
            (&files.mask, encode_image(sample.mask(), ImageKind::PgmMask)?),
        ];
        let mut hashes = Vec::with_capacity(3);
        for (name, bytes) in &blobs {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            hashes.push(sha256_hex(bytes));
        }
        let [visible, infrared, mask]: [String; 3] = hashes.try_into().expect("three files");
        entries.push(ManifestEntry {
            index,
            seed: sample.spec.seed,
            spec: sample.spec.clone(),
            files,
            sha256: SampleFiles {
                visible,
                infrared,
                mask,
            },
        });
    }
    let manifest = Manifest {
        master_seed: cfg.seed,
        count: n,
        height: cfg.height,
        width: cfg.width,
        samples: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok((samples, manifest))
}

/// Reads one manifest entry's files back as a labeled pair.
pub fn load_entry(dir: &Path, entry: &ManifestEntry) -> Result<ImagePair> {
    let p = |name: &str| -> PathBuf { dir.join(name) };
    ImagePair::new(
        read_image(&p(&entry.files.visible), ImageKind::PpmRgb)?,
        read_image(&p(&entry.files.infrared), ImageKind::PgmGray)?,
        Some(read_image(&p(&entry.files.mask), ImageKind::PgmMask)?),
    )
}
