//! Command-line surface. Flags override values loaded from `--config`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mclf_core::synth::Regime;

#[derive(Debug, Parser)]
#[command(name = "mclf", version, about = "Infrared-visible maritime fusion and segmentation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON file with flat keys mirroring the pipeline config.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed; falls back to MCLF_SEED, then the config file.
    #[arg(long, global = true, env = "MCLF_SEED")]
    pub seed: Option<u64>,
    /// Image size as HxW.
    #[arg(long, global = true, value_name = "HxW", value_parser = parse_size)]
    pub size: Option<(usize, usize)>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled dataset.
    Gen(GenArgs),
    /// Run the pipeline on one pair or on every sample of a dataset.
    Run(RunArgs),
    /// Score predicted masks against truth masks.
    Eval(EvalArgs),
    /// Run the invariant suite and print a JSON report.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Fix the regime for every sample instead of cycling.
    #[arg(long, value_parser = parse_regime)]
    pub regime: Option<Regime>,
    #[arg(long, value_parser = parse_strength)]
    pub strength: Option<f64>,
    #[arg(long)]
    pub ir_noise: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "PATH", required_unless_present = "dataset", requires = "ir")]
    pub vis: Option<PathBuf>,
    #[arg(long, value_name = "PATH", required_unless_present = "dataset", requires = "vis")]
    pub ir: Option<PathBuf>,
    /// Ground-truth mask; enables losses.json.
    #[arg(long, value_name = "PATH", conflicts_with = "dataset")]
    pub mask: Option<PathBuf>,
    /// Dataset directory with a manifest; every sample is processed.
    #[arg(long, value_name = "DIR", conflicts_with_all = ["vis", "ir"])]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub swap_enhance_base: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    pub pred: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub truth: PathBuf,
    #[arg(long)]
    pub include_background: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SelftestArgs {
    /// Perturbs the focal-loss gradient so the gradient check must fail.
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad size {t:?}: {e}"));
    Ok((num(h)?, num(w)?))
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    s.parse().map_err(|e: mclf_core::Error| e.to_string())
}

fn parse_strength(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("strength {v} outside [0, 1]"))
    }
}
