//! Invariant suite behind `mclf selftest`. Each check compares the library
//! against an independent oracle or an exact identity.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use mclf_core::attention::{
    gated_cross_attention, gated_self_attention, hybrid_attention, CrossAttnParams, HybridAttnParams, SelfAttnParams,
};
use mclf_core::blocks::{axis_maps, fsec_trace, recalibrate, svca_trace, FsecConfig, FsecParams, SvcaParams};
use mclf_core::freq::{dwt2, fft_refine, idwt2, FftRefineParams, Spectrum};
use mclf_core::io::{decode_image, encode_image, ImageKind};
use mclf_core::losses::{
    focal_loss, fusion_kink_distance, fusion_loss, gradient_check, iou_loss, total_loss, FocalParams,
    FusionLossWeights, GradCheckOptions, LossValue, GRADCHECK_TOLERANCE,
};
use mclf_core::metrics::iou_eval;
use mclf_core::rng::{ParamSet, Rng};
use mclf_core::synth::{degrade, generate_samples, render_clean, sample_spec, GenConfig, Regime};
use mclf_core::{Error, ImagePair, Pipeline, PipelineConfig, Tensor};
use serde::Serialize;

use crate::commands::run_pair;

pub const DETERMINISM_SEED: u64 = 7;
pub const RUN_BUDGET: Duration = Duration::from_secs(10);
pub const GRADCHECK_BUDGET: Duration = Duration::from_secs(30);
pub const DWT_BUDGET: Duration = Duration::from_secs(1);
pub const FUZZ_PARAM_SETS: u64 = 100;

#[derive(Clone, Debug, Default)]
pub struct SelftestOptions {
    /// Negative control: perturb the focal-loss gradient.
    pub corrupt_gradient: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelftestReport {
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

type Outcome = Result<(bool, String), Error>;

fn energy(t: &Tensor) -> f64 {
    t.data().iter().map(|v| v * v).sum()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn dwt_reconstruction() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (seed, shape) in [[1, 1, 4, 4], [1, 2, 8, 16], [1, 4, 32, 32], [1, 4, 32, 32]].iter().enumerate() {
        let x = Rng::new(seed as u64, 0).uniform_tensor(shape, -5.0, 5.0);
        worst = worst.max(idwt2(&dwt2(&x, 2)?)?.max_abs_diff(&x));
    }
    let took = start.elapsed();
    Ok((worst < 1e-8 && took < DWT_BUDGET, format!("max |Δ| = {worst:.2e} in {took:?}")))
}

fn dwt_energy() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..4 {
        let x = Rng::new(seed, 1).uniform_tensor(&[1, 4, 32, 32], -1.0, 1.0);
        worst = worst.max((dwt2(&x, 2)?.energy() - energy(&x)).abs());
    }
    Ok((worst < 1e-8, format!("max |ΔE| = {worst:.2e}")))
}

/// Direct O(N²) DFT of an `h × w` plane: `(re, im)` at each frequency.
pub fn naive_dft(plane: &[f64], h: usize, w: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..h {
                for j in 0..w {
                    let ang = -2.0 * PI * ((u * i) as f64 / h as f64 + (v * j) as f64 / w as f64);
                    re += plane[i * w + j] * ang.cos();
                    im += plane[i * w + j] * ang.sin();
                }
            }
            out.push((re, im));
        }
    }
    out
}

fn fft_parseval() -> Outcome {
    let (h, w) = (8, 8);
    let mut worst_mag = 0.0f64;
    let mut worst_energy = 0.0f64;
    for seed in 0..5 {
        let x = Rng::new(seed, 2).uniform_tensor(&[1, 1, h, w], -1.0, 1.0);
        let dft = naive_dft(x.data(), h, w);
        let spatial = energy(&x);
        let spectral: f64 = dft.iter().map(|(r, i)| r * r + i * i).sum::<f64>() / (h * w) as f64;
        let s = Spectrum::forward(&x)?;
        let wh = w / 2 + 1;
        for u in 0..h {
            for v in 0..wh {
                let (r, i) = dft[u * w + v];
                let want = r.hypot(i);
                // Unit floor: bins with near-zero magnitude have no meaningful relative error.
                let err = (s.magnitude.at(&[0, 0, u, v]) - want).abs() / want.max(1.0);
                worst_mag = worst_mag.max(err);
            }
        }
        worst_energy = worst_energy
            .max(rel_err(spectral, spatial))
            .max(rel_err(s.energy(), spatial));
    }
    let ok = worst_mag < 1e-6 && worst_energy < 1e-6;
    Ok((ok, format!("magnitude err {worst_mag:.2e}, energy rel err {worst_energy:.2e}")))
}

fn fft_refine_identity() -> Outcome {
    let x = Rng::new(3, 3).uniform_tensor(&[1, 4, 16, 16], -2.0, 2.0);
    let d = fft_refine(&x, &FftRefineParams::identity(4))?.max_abs_diff(&x);
    Ok((d < 1e-8, format!("max |Δ| = {d:.2e}")))
}

fn row_sum_error(attn: &Tensor) -> f64 {
    let m = attn.dim(attn.rank() - 1);
    attn.data()
        .chunks(m)
        .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

fn outside_unit(t: &Tensor) -> usize {
    t.data().iter().filter(|v| !(0.0..=1.0).contains(*v)).count()
}

/// Draws fresh weights and inputs per seed; returns (worst row error,
/// out-of-range gate count).
fn fuzz_attention() -> Result<(f64, usize), Error> {
    let (c, heads, n) = (8, 2, 12);
    let mut worst = 0.0f64;
    let mut bad = 0;
    for seed in 0..FUZZ_PARAM_SETS {
        let ps = ParamSet::new(seed);
        let mut rng = Rng::new(seed, 4);
        let a = rng.uniform_tensor(&[1, n, c], -3.0, 3.0);
        let b = rng.uniform_tensor(&[1, n + 4, c], -3.0, 3.0);
        let sa = gated_self_attention(&a, &SelfAttnParams::init(&ps.child("self"), c, heads)?)?;
        let ca = gated_cross_attention(&a, &b, &CrossAttnParams::init(&ps.child("cross"), c, heads)?)?;
        let maps = rng.uniform_tensor(&[1, c, 4, 8], -3.0, 3.0);
        let hy = hybrid_attention(&maps, &maps.scale(0.5), &HybridAttnParams::init(&ps.child("hybrid"), c))?;
        let sv = svca_trace(&maps, &SvcaParams::init(&ps.child("svca"), c)?)?;
        for attn in [&sa.attn, &ca.attn, &sv.attn] {
            worst = worst.max(row_sum_error(attn));
        }
        for gate in [&sa.gate, &ca.gate, hy.m_vis.values(), hy.m_ir.values(), hy.gate.values(), &sv.m_h, &sv.m_w] {
            bad += outside_unit(gate);
        }
    }
    Ok((worst, bad))
}

fn softmax_rows(fuzz: &Result<(f64, usize), String>) -> Outcome {
    match fuzz {
        Ok((worst, _)) => Ok((*worst <= 1e-9, format!("{FUZZ_PARAM_SETS} param sets, max |Σrow − 1| = {worst:.2e}"))),
        Err(e) => Ok((false, e.clone())),
    }
}

fn gate_bounds(fuzz: &Result<(f64, usize), String>) -> Outcome {
    match fuzz {
        Ok((_, bad)) => Ok((*bad == 0, format!("{FUZZ_PARAM_SETS} param sets, {bad} gate values outside [0, 1]"))),
        Err(e) => Ok((false, e.clone())),
    }
}

fn fsec_gate_endpoint() -> Outcome {
    let config = FsecConfig {
        gate_override: Some(1.0),
        ..FsecConfig::default()
    };
    let p = FsecParams::init(&ParamSet::new(5), 8, 4, config);
    let mut rng = Rng::new(5, 5);
    let xv = rng.uniform_tensor(&[1, 8, 8, 8], -1.0, 1.0);
    let xi = rng.uniform_tensor(&[1, 8, 8, 8], -1.0, 1.0);
    let t = fsec_trace(&xv, &xi, &p)?;
    let ok = t.enhanced.ev == t.yi && t.enhanced.ei == t.yv;
    Ok((ok, "G = 1: E^V == Y^I and E^I == Y^V bitwise".into()))
}

fn svca_identity() -> Outcome {
    let x = Rng::new(6, 6).uniform_tensor(&[2, 8, 5, 7], -10.0, 10.0);
    let y = recalibrate(&x, &Tensor::ones(&[2, 8, 5]), &Tensor::ones(&[2, 8, 7]))?;
    let same = x.data().iter().zip(y.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    Ok((same, "unit axis maps leave X bitwise unchanged".into()))
}

fn svca_bound() -> Outcome {
    let mut violations = 0;
    for seed in 0..10 {
        let x = Rng::new(seed, 7).uniform_tensor(&[1, 8, 6, 9], -5.0, 5.0);
        let p = SvcaParams::init(&ParamSet::new(seed), 8)?;
        let (mh, mw) = axis_maps(&x, &p)?;
        let y = recalibrate(&x, &mh, &mw)?;
        violations += x.data().iter().zip(y.data()).filter(|(a, b)| b.abs() > a.abs()).count();
    }
    Ok((violations == 0, format!("{violations} elements with |X'| > |X|")))
}

fn random_target(seed: u64, k: usize, h: usize, w: usize) -> Tensor {
    let mut rng = Rng::new(seed, 8);
    Tensor::from_fn(&[h, w], |_| rng.below(k) as f64)
}

fn focal_collapse() -> Outcome {
    let (k, h, w) = (5, 6, 7);
    let logits = Rng::new(8, 8).uniform_tensor(&[k, h, w], -4.0, 4.0);
    let t = random_target(8, k, h, w);
    let focal = focal_loss(&logits, &t, FocalParams { alpha: 1.0, gamma: 0.0 })?.value;
    // Mean cross-entropy computed directly: log Σ exp(z) − z_t.
    let p = h * w;
    let ce = (0..p)
        .map(|pix| {
            let lse = (0..k).map(|c| logits.data()[c * p + pix].exp()).sum::<f64>().ln();
            lse - logits.data()[t.data()[pix] as usize * p + pix]
        })
        .sum::<f64>()
        / p as f64;
    let d = (focal - ce).abs();
    Ok((d < 1e-12, format!("|focal − CE| = {d:.2e}")))
}

fn iou_perfect() -> Outcome {
    let (k, h, w) = (5, 8, 8);
    let t = random_target(9, k, h, w);
    let onehot = Tensor::from_fn(&[k, h, w], |i| f64::from(t.at(&[i[1], i[2]]) as usize == i[0]));
    let loss = iou_loss(&onehot, &t, 1e-6)?.value;
    Ok((loss < 1e-5, format!("loss = {loss:.2e}")))
}

fn gradcheck_outcome(r: mclf_core::losses::GradCheckReport) -> Outcome {
    let ok = r.coords_checked >= 64 && r.passed(GRADCHECK_TOLERANCE);
    Ok((
        ok,
        format!(
            "{} coords, max rel err {:.2e}, {} kinks skipped",
            r.coords_checked, r.max_rel_err, r.skipped_kinks
        ),
    ))
}

fn gradcheck_focal(corrupt: bool) -> Outcome {
    let logits = Rng::new(10, 10).uniform_tensor(&[5, 6, 6], -2.0, 2.0);
    let t = random_target(10, 5, 6, 6);
    let f = |z: &Tensor| -> Result<LossValue, Error> {
        let mut v = focal_loss(z, &t, FocalParams::default())?;
        if corrupt {
            v.grad = v.grad.scale(1.05);
        }
        Ok(v)
    };
    gradcheck_outcome(gradient_check(f, &logits, GradCheckOptions::default(), None)?)
}

fn gradcheck_iou() -> Outcome {
    let probs = Rng::new(11, 11).uniform_tensor(&[5, 6, 6], 0.1, 0.9);
    let t = random_target(11, 5, 6, 6);
    gradcheck_outcome(gradient_check(|q| iou_loss(q, &t, 1e-6), &probs, GradCheckOptions::default(), None)?)
}

fn gradcheck_fusion() -> Outcome {
    let mut rng = Rng::new(12, 12);
    let rgb = rng.uniform_tensor(&[1, 12, 12], 0.0, 1.0);
    let ir = rng.uniform_tensor(&[1, 12, 12], 0.0, 1.0);
    let fused = rng.uniform_tensor(&[1, 12, 12], 0.0, 1.0);
    let w = FusionLossWeights::default();
    let kink = |x: &Tensor, i: usize| fusion_kink_distance(x, &rgb, &ir, i);
    gradcheck_outcome(gradient_check(
        |x| fusion_loss(x, &rgb, &ir, w),
        &fused,
        GradCheckOptions::default(),
        Some(&kink),
    )?)
}

fn total_identities() -> Outcome {
    let mut rng = Rng::new(13, 13);
    let mut ok = true;
    for _ in 0..50 {
        let (f, i, u) = (rng.uniform(0.0, 5.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 3.0));
        let r = total_loss(f, i, u);
        ok &= r.seg == f + i && r.total == (f + i) + 0.1 * u;
    }
    Ok((ok, "seg = focal + iou, total = seg + 0.1·fus on 50 draws".into()))
}

fn determinism(cfg: &PipelineConfig) -> Outcome {
    let cfg = PipelineConfig {
        seed: DETERMINISM_SEED,
        height: 64,
        width: 64,
        ..cfg.clone()
    };
    let gen = GenConfig {
        seed: DETERMINISM_SEED,
        height: 64,
        width: 64,
        ..GenConfig::default()
    };
    let sample = generate_samples(1, &gen)?.remove(0);
    let pair = ImagePair::new(sample.pair.visible, sample.pair.infrared, None)?;
    let mut slowest = Duration::ZERO;
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let start = Instant::now();
        let art = run_pair(&Pipeline::new(cfg.clone())?, &pair).map_err(|e| Error::Config(e.to_string()))?;
        slowest = slowest.max(start.elapsed());
        outputs.push((art.pred_mask, art.fused));
    }
    let same = outputs[0] == outputs[1];
    Ok((same && slowest < RUN_BUDGET, format!("identical bytes: {same}, slowest run {slowest:?}")))
}

fn shape_contract(cfg: &PipelineConfig) -> Outcome {
    let pipeline = Pipeline::new(cfg.clone())?;
    let mut rng = Rng::new(14, 14);
    let mut detail = Vec::new();
    let mut ok = true;
    for (h, w) in [(32, 32), (32, 64), (64, 32)] {
        let pair = ImagePair::new(rng.uniform_tensor(&[3, h, w], 0.0, 1.0), rng.uniform_tensor(&[1, h, w], 0.0, 1.0), None)?;
        let out = pipeline.run(&pair)?;
        let range = out.fused.pixels.data().iter().all(|v| (0.0..=1.0).contains(v));
        ok &= out.seg.classes.shape() == [h, w] && out.fused.pixels.shape() == [1, h, w] && range;
        detail.push(format!("{h}x{w}"));
    }
    Ok((ok, format!("sizes {}", detail.join(", "))))
}

fn label_invariance() -> Outcome {
    let mut changed = 0;
    for i in 0..32 {
        for regime in Regime::ALL {
            let gen = GenConfig {
                seed: 1000 + i,
                height: 32,
                width: 48,
                regime: Some(regime),
                strength: None,
                ir_noise: i % 2 == 1,
            };
            let clean = render_clean(&sample_spec(&gen, i as usize))?;
            let degraded = degrade(&clean);
            let before = encode_image(clean.mask(), ImageKind::PgmMask)?;
            let after = encode_image(degraded.mask(), ImageKind::PgmMask)?;
            changed += usize::from(before != after);
        }
    }
    Ok((changed == 0, format!("32 specs × 4 regimes, {changed} masks changed")))
}

fn metric_oracle() -> Outcome {
    let k = 5;
    let mut mismatches = 0;
    for seed in 0..20 {
        let truth = random_target(100 + seed, k, 8, 8);
        let pred = random_target(200 + seed, k, 8, 8);
        let include_background = seed % 2 == 0;
        let got = iou_eval(&pred, &truth, k, include_background)?;
        let first = usize::from(!include_background);
        let mut defined = Vec::new();
        for c in first..k {
            let (mut inter, mut union) = (0u64, 0u64);
            for (p, t) in pred.data().iter().zip(truth.data()) {
                let (a, b) = (*p as usize == c, *t as usize == c);
                inter += u64::from(a && b);
                union += u64::from(a || b);
            }
            let want = (union > 0).then(|| inter as f64 / union as f64);
            let name = mclf_core::metrics::class_name(c);
            mismatches += usize::from(got.per_class.get(&name) != Some(&want));
            defined.extend(want);
        }
        let miou = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        mismatches += usize::from(got.miou != miou);
    }
    Ok((mismatches == 0, format!("20 random 8x8 pairs, {mismatches} mismatches")))
}

fn io_roundtrip() -> Outcome {
    let mut rng = Rng::new(15, 15);
    let mask = Tensor::from_fn(&[9, 11], |_| rng.below(256) as f64);
    let back = decode_image(&encode_image(&mask, ImageKind::PgmMask)?, ImageKind::PgmMask)?;
    let img = rng.uniform_tensor(&[3, 9, 11], 0.0, 1.0);
    let img_back = decode_image(&encode_image(&img, ImageKind::PpmRgb)?, ImageKind::PpmRgb)?;
    let d = img_back.max_abs_diff(&img);
    let ok = back == mask && d <= 1.0 / 510.0;
    Ok((ok, format!("mask exact: {}, rgb max |Δ| = {d:.2e}", back == mask)))
}

/// Runs every check; never short-circuits.
pub fn run_selftest(cfg: &PipelineConfig, opts: &SelftestOptions) -> SelftestReport {
    let mut checks = Vec::new();
    let mut record = |name: &'static str, outcome: Outcome| {
        let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        log::info!("{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
        checks.push(Check { name, passed, detail });
    };
    record("dwt_reconstruction", dwt_reconstruction());
    record("dwt_energy", dwt_energy());
    record("fft_parseval", fft_parseval());
    record("fft_refine_identity", fft_refine_identity());
    let fuzz = fuzz_attention().map_err(|e| format!("error: {e}"));
    record("attention_softmax_rows", softmax_rows(&fuzz));
    record("gate_bounds", gate_bounds(&fuzz));
    record("fsec_gate_endpoint", fsec_gate_endpoint());
    record("svca_identity", svca_identity());
    record("svca_recalibration_bound", svca_bound());
    record("focal_collapse_to_ce", focal_collapse());
    record("soft_iou_perfect", iou_perfect());
    let start = Instant::now();
    record("gradcheck_focal", gradcheck_focal(opts.corrupt_gradient));
    record("gradcheck_iou", gradcheck_iou());
    record("gradcheck_fusion", gradcheck_fusion());
    let took = start.elapsed();
    record(
        "gradcheck_runtime",
        Ok((took < GRADCHECK_BUDGET, format!("three gradient checks in {took:?}"))),
    );
    record("total_loss_identities", total_identities());
    record("run_determinism", determinism(cfg));
    record("pipeline_shape_contract", shape_contract(cfg));
    record("degrade_label_invariance", label_invariance());
    record("metric_oracle", metric_oracle());
    record("io_roundtrip", io_roundtrip());
    SelftestReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}
