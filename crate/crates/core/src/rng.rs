//! Seeded randomness and frozen parameter construction.
//!
//! Every consumer draws from its own ChaCha8 stream, selected by hashing a
//! textual label, so adding a new consumer never perturbs existing draws.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Conv2d, Linear, NormAffine, Padding, Tensor};

/// FNV-1a hash of a label, used as a ChaCha stream id.
pub fn stream_id(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// SplitMix64 finalizer over `(master, index)`: per-item child seeds.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { inner }
    }

    pub fn for_label(seed: u64, label: &str) -> Self {
        Self::new(seed, stream_id(label))
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = self.inner.sample(StandardNormal);
        mean + std * z
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn uniform_tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        Tensor::from_fn(shape, |_| self.uniform(lo, hi))
    }
}

/// Deterministic factory for frozen weights, scoped by a path of labels.
///
/// The same `(seed, scope, name)` always yields the same tensor.
#[derive(Clone, Debug)]
pub struct ParamSet {
    seed: u64,
    scope: String,
}

impl ParamSet {
    pub fn new(seed: u64) -> Self {
        ParamSet {
            seed,
            scope: String::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn child(&self, name: &str) -> ParamSet {
        let scope = if self.scope.is_empty() {
            name.to_string()
        } else {
            format!("{}/{name}", self.scope)
        };
        ParamSet {
            seed: self.seed,
            scope,
        }
    }

    pub fn rng(&self, name: &str) -> Rng {
        Rng::for_label(self.seed, &format!("{}/{name}", self.scope))
    }

    pub fn uniform(&self, name: &str, shape: &[usize], bound: f64) -> Tensor {
        self.rng(name).uniform_tensor(shape, -bound, bound)
    }

    /// Bias-free projection with weights in `±1/√d_in`.
    pub fn linear(&self, name: &str, d_in: usize, d_out: usize) -> Linear {
        let bound = 1.0 / (d_in as f64).sqrt();
        Linear {
            weight: self.uniform(name, &[d_in, d_out], bound),
            bias: None,
        }
    }

    pub fn linear_with_bias(&self, name: &str, d_in: usize, d_out: usize) -> Linear {
        let bound = 1.0 / (d_in as f64).sqrt();
        Linear {
            weight: self.uniform(name, &[d_in, d_out], bound),
            bias: Some(self.uniform(&format!("{name}.bias"), &[d_out], bound)),
        }
    }

    /// Bias-free `k × k` convolution with "same" zero padding.
    pub fn conv(&self, name: &str, c_out: usize, c_in: usize, k: usize, groups: usize) -> Conv2d {
        self.conv_rect(name, c_out, c_in, k, k, groups)
    }

    /// Bias-free `kh × kw` convolution with "same" zero padding.
    pub fn conv_rect(&self, name: &str, c_out: usize, c_in: usize, kh: usize, kw: usize, groups: usize) -> Conv2d {
        let per_group = c_in / groups;
        let bound = 1.0 / ((per_group * kh * kw) as f64).sqrt();
        let w = self.uniform(name, &[c_out, per_group, kh, kw], bound);
        Conv2d::new(w, None, groups, Padding::Same).expect("well-formed conv parameters")
    }

    pub fn norm_affine(&self, channels: usize) -> NormAffine {
        NormAffine::identity(channels)
    }
}
