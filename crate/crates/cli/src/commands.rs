//! `gen`, `run` and `eval`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use mclf_core::io::{encode_image, read_image, ImageKind};
use mclf_core::losses::LossReport;
use mclf_core::metrics::{write_metrics, Confusion, EvalResult};
use mclf_core::model::{FusedImage, PipelineOutput, SegMap};
use mclf_core::synth::{generate_dataset, load_entry, GenConfig, Manifest, MANIFEST_FILE};
use mclf_core::{Error, ImagePair, Pipeline, PipelineConfig, Tensor};
use serde::Serialize;

use crate::args::{EvalArgs, GenArgs, GlobalArgs, RunArgs};
use crate::CliError;

pub const PRED_MASK_FILE: &str = "pred-mask.pgm";
pub const FUSED_FILE: &str = "fused.pgm";
pub const LOSSES_FILE: &str = "losses.json";
pub const METRICS_FILE: &str = "metrics.json";

/// Config file (or defaults), then flag overrides, then validation.
pub fn resolve_config(global: &GlobalArgs) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &global.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some((h, w)) = global.size {
        cfg.height = h;
        cfg.width = w;
    }
    if let Some(out) = &global.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes the dataset into the output directory and returns the manifest path.
pub fn cmd_gen(cfg: &PipelineConfig, args: &GenArgs) -> Result<PathBuf, CliError> {
    let gen = GenConfig {
        seed: cfg.seed,
        height: cfg.height,
        width: cfg.width,
        regime: args.regime,
        strength: args.strength,
        ir_noise: args.ir_noise,
    };
    let n = usize::try_from(args.n).map_err(|_| Error::Config("sample count too large".into()))?;
    generate_dataset(n, &gen, &cfg.out_dir)?;
    Ok(cfg.out_dir.join(MANIFEST_FILE))
}

/// Encoded outputs of one pipeline run.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub pred_mask: Vec<u8>,
    pub fused: Vec<u8>,
    pub losses: Option<LossReport>,
}

fn pad_image(t: &Tensor, h: usize, w: usize) -> Result<Tensor, Error> {
    let c = t.dim(0);
    t.reshape(&[1, c, t.dim(1), t.dim(2)])?
        .pad_replicate(h, w)?
        .into_shape(&[c, h, w])
}

fn crop_image(t: &Tensor, h: usize, w: usize) -> Result<Tensor, Error> {
    let c = t.dim(0);
    t.reshape(&[1, c, t.dim(1), t.dim(2)])?.crop(h, w)?.into_shape(&[c, h, w])
}

/// Runs the pipeline on a pair of any size: inputs are edge-padded up to the
/// next multiple of 32 and both outputs cropped back.
pub fn run_pair(pipeline: &Pipeline, pair: &ImagePair) -> Result<RunArtifacts, CliError> {
    let (h, w) = (pair.height(), pair.width());
    let (ph, pw) = (h.next_multiple_of(32), w.next_multiple_of(32));
    let out = if (ph, pw) == (h, w) {
        pipeline.run(pair)?
    } else {
        log::info!("padding {h}x{w} input to {ph}x{pw}");
        let padded = ImagePair::new(pad_image(&pair.visible, ph, pw)?, pad_image(&pair.infrared, ph, pw)?, None)?;
        let out = pipeline.run(&padded)?;
        PipelineOutput {
            seg: SegMap::from_logits(crop_image(&out.seg.logits, h, w)?)?,
            fused: FusedImage {
                pixels: crop_image(&out.fused.pixels, h, w)?,
            },
            scales: out.scales,
        }
    };
    let losses = match pair.mask {
        Some(_) => Some(pipeline.losses(&out, pair)?),
        None => None,
    };
    Ok(RunArtifacts {
        pred_mask: encode_image(&out.seg.classes, ImageKind::PgmMask)?,
        fused: encode_image(&out.fused.pixels, ImageKind::PgmGray)?,
        losses,
    })
}

#[derive(Clone, Debug, Serialize)]
struct SampleLosses<'a> {
    sample: &'a str,
    #[serde(flatten)]
    report: &'a LossReport,
}

/// Returns the files written.
pub fn cmd_run(cfg: &PipelineConfig, args: &RunArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = cfg.clone();
    cfg.swap_enhance_base |= args.swap_enhance_base;
    let pipeline = Pipeline::new(cfg.clone())?;
    create_dir(&cfg.out_dir)?;
    let mut written = Vec::new();

    if let Some(dir) = &args.dataset {
        let manifest = Manifest::load(&dir.join(MANIFEST_FILE))?;
        let mut reports = Vec::new();
        for entry in &manifest.samples {
            let pair = load_entry(dir, entry)?;
            let art = run_pair(&pipeline, &pair)?;
            for (name, bytes) in [(&entry.files.mask, &art.pred_mask), (&format!("sample_{:04}_fused.pgm", entry.index), &art.fused)] {
                let path = cfg.out_dir.join(name);
                write_file(&path, bytes)?;
                written.push(path);
            }
            reports.push((entry.files.mask.clone(), art.losses.expect("dataset samples carry masks")));
        }
        let rows: Vec<SampleLosses> = reports
            .iter()
            .map(|(sample, report)| SampleLosses { sample, report })
            .collect();
        let path = cfg.out_dir.join(LOSSES_FILE);
        write_file(&path, (serde_json::to_string_pretty(&rows)? + "\n").as_bytes())?;
        written.push(path);
        return Ok(written);
    }

    let (vis, ir) = match (&args.vis, &args.ir) {
        (Some(v), Some(i)) => (v, i),
        _ => return Err(Error::Config("run needs --vis and --ir, or --dataset".into()).into()),
    };
    let mask = args.mask.as_deref().map(|p| read_image(p, ImageKind::PgmMask)).transpose()?;
    let pair = ImagePair::new(read_image(vis, ImageKind::PpmRgb)?, read_image(ir, ImageKind::PgmGray)?, mask)?;
    let art = run_pair(&pipeline, &pair)?;
    for (name, bytes) in [(PRED_MASK_FILE, &art.pred_mask), (FUSED_FILE, &art.fused)] {
        let path = cfg.out_dir.join(name);
        write_file(&path, bytes)?;
        written.push(path);
    }
    if let Some(report) = &art.losses {
        let path = cfg.out_dir.join(LOSSES_FILE);
        write_file(&path, (serde_json::to_string_pretty(report)? + "\n").as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Outcome of `eval`: the metrics plus every file that was skipped and why.
#[derive(Clone, Debug, Serialize)]
pub struct EvalSummary {
    pub result: EvalResult,
    pub evaluated: Vec<String>,
    pub skipped: Vec<(String, String)>,
}

fn mask_names(dir: &Path) -> Result<BTreeSet<String>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut names = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with("mask.pgm") && entry.path().is_file() {
            names.insert(name);
        }
    }
    Ok(names)
}

/// Pairs `*mask.pgm` files by name and accumulates one confusion over all
/// pairs, so IoU is computed at dataset level. Unpaired or unreadable files
/// are skipped with a warning; it is an error only if nothing was evaluated.
pub fn cmd_eval(cfg: &PipelineConfig, args: &EvalArgs) -> Result<EvalSummary, CliError> {
    let pred = mask_names(&args.pred)?;
    let truth = mask_names(&args.truth)?;
    let mut confusion = Confusion::new(cfg.classes);
    let mut evaluated = Vec::new();
    let mut skipped = Vec::new();

    for name in pred.symmetric_difference(&truth) {
        let side = if pred.contains(name) { "truth" } else { "prediction" };
        skipped.push((name.clone(), format!("no matching {side} file")));
    }
    for name in pred.intersection(&truth) {
        let pair = read_image(&args.pred.join(name), ImageKind::PgmMask)
            .and_then(|p| Ok((p, read_image(&args.truth.join(name), ImageKind::PgmMask)?)));
        let outcome = pair.and_then(|(p, t)| {
            // Accumulate into a scratch copy so a bad pair leaves no trace.
            let mut next = confusion.clone();
            next.accumulate(&p, &t)?;
            Ok(next)
        });
        match outcome {
            Ok(next) => {
                confusion = next;
                evaluated.push(name.clone());
            }
            Err(e) => skipped.push((name.clone(), e.to_string())),
        }
    }
    for (name, why) in &skipped {
        log::warn!("skipping {name}: {why}");
    }
    if evaluated.is_empty() {
        return Err(CliError::Failed(format!(
            "no prediction/truth pairs could be evaluated ({} skipped)",
            skipped.len()
        )));
    }
    let result = confusion.result(args.include_background);
    create_dir(&cfg.out_dir)?;
    write_metrics(&result, &cfg.out_dir.join(METRICS_FILE))?;
    Ok(EvalSummary {
        result,
        evaluated,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use mclf_core::rng::Rng;

    fn small_config(out: &Path) -> PipelineConfig {
        PipelineConfig {
            channels: [8, 8, 8, 8],
            heads: 2,
            seg_width: 8,
            out_dir: out.to_path_buf(),
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"seed": 3, "height": 96, "classes": 4}"#).unwrap();
        let g = GlobalArgs {
            config: Some(path),
            seed: Some(9),
            size: None,
            out: None,
        };
        let cfg = resolve_config(&g).unwrap();
        assert_eq!((cfg.seed, cfg.height, cfg.width, cfg.classes), (9, 96, 64, 4));
        let bad = GlobalArgs {
            size: Some((50, 64)),
            ..GlobalArgs::default()
        };
        assert_eq!(resolve_config(&bad).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn odd_sized_pair_keeps_its_size() {
        let p = Pipeline::new(small_config(Path::new("unused"))).unwrap();
        let mut rng = Rng::new(1, 0);
        let pair = ImagePair::new(rng.uniform_tensor(&[3, 20, 45], 0.0, 1.0), rng.uniform_tensor(&[1, 20, 45], 0.0, 1.0), None)
            .unwrap();
        let art = run_pair(&p, &pair).unwrap();
        let mask = mclf_core::io::decode_image(&art.pred_mask, ImageKind::PgmMask).unwrap();
        let fused = mclf_core::io::decode_image(&art.fused, ImageKind::PgmGray).unwrap();
        assert_eq!(mask.shape(), &[20, 45]);
        assert_eq!(fused.shape(), &[1, 20, 45]);
        assert!(art.losses.is_none());
    }

    fn write_mask(dir: &Path, name: &str, rows: &[&[u8]]) {
        let w = rows[0].len();
        let t = Tensor::from_vec(&[rows.len(), w], rows.iter().flat_map(|r| r.iter().map(|&v| v as f64)).collect()).unwrap();
        mclf_core::io::write_image(&dir.join(name), &t, ImageKind::PgmMask).unwrap();
    }

    #[test]
    fn eval_sums_counts_over_images_and_skips_bad_pairs() {
        let root = tempfile::tempdir().unwrap();
        let (pred, truth, out) = (root.path().join("p"), root.path().join("t"), root.path().join("o"));
        for d in [&pred, &truth] {
            std::fs::create_dir(d).unwrap();
        }
        write_mask(&truth, "a_mask.pgm", &[&[1, 1], &[0, 0]]);
        write_mask(&pred, "a_mask.pgm", &[&[1, 0], &[0, 0]]);
        write_mask(&truth, "b_mask.pgm", &[&[0, 1], &[1, 1]]);
        write_mask(&pred, "b_mask.pgm", &[&[1, 1], &[1, 0]]);
        write_mask(&pred, "c_mask.pgm", &[&[1]]);
        write_mask(&truth, "c_mask.pgm", &[&[1, 1]]);
        write_mask(&pred, "orphan_mask.pgm", &[&[1]]);

        let args = EvalArgs {
            pred,
            truth,
            include_background: false,
        };
        let s = cmd_eval(&small_config(&out), &args).unwrap();
        assert_eq!(s.evaluated, ["a_mask.pgm", "b_mask.pgm"]);
        assert_eq!(s.skipped.len(), 2);
        // Image a: tp 1, fn 1. Image b: tp 2, fp 1, fn 1. Summed: 3 / (3 + 1 + 2).
        let c = s.result.counts["cargo-ship"];
        assert_eq!((c.tp, c.fp, c.fn_), (3, 1, 2));
        assert_eq!(s.result.miou, Some(0.5));
        assert!(out.join(METRICS_FILE).exists());
    }

    #[test]
    fn eval_fails_when_everything_is_skipped() {
        let root = tempfile::tempdir().unwrap();
        let (pred, truth) = (root.path().join("p"), root.path().join("t"));
        std::fs::create_dir(&pred).unwrap();
        std::fs::create_dir(&truth).unwrap();
        write_mask(&pred, "x_mask.pgm", &[&[1]]);
        let args = EvalArgs {
            pred,
            truth,
            include_background: false,
        };
        let err = cmd_eval(&small_config(&root.path().join("o")), &args).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
