//! Dense row-major `f64` tensors.
//!
//! Feature maps follow the `B×C×H×W` convention, token sequences `B×N×C`.
//! Every public operation returns a fresh tensor; nothing is mutated in place
//! behind the caller's back.

mod fixture;
mod nn;

pub use fixture::{decode_fixture, encode_fixture, read_fixture, write_fixture, FIXTURE_MAGIC};
pub use nn::{resize_bilinear, Conv2d, Linear, NormAffine, Padding};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Abs,
    Exp,
    Log,
    Sigmoid,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Mean,
    Max,
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl BinaryOp {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
            BinaryOp::Max => a.max(b),
        }
    }
}

impl UnaryOp {
    #[inline]
    fn apply(self, a: f64) -> f64 {
        match self {
            UnaryOp::Neg => -a,
            UnaryOp::Abs => a.abs(),
            UnaryOp::Exp => a.exp(),
            UnaryOp::Log => a.ln(),
            UnaryOp::Sigmoid => sigmoid(a),
            UnaryOp::Relu => a.max(0.0),
        }
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn check_axis(rank: usize, axis: usize) -> Result<()> {
    if axis >= rank {
        return Err(Error::dim(format!("axis {axis} out of range for rank {rank}")));
    }
    Ok(())
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::dim(format!("zero-sized dimension in {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {} values, got {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero-sized dimension");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Row-major identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        let mut idx = vec![0; shape.len()];
        for v in t.data.iter_mut() {
            *v = f(&idx);
            for d in (0..shape.len()).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
            off = off * d + i;
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest absolute elementwise difference; panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn into_shape(self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    /// Applies a unary op. `Log` of a non-positive entry is reported as a
    /// non-finite output rather than silently producing `-inf`/`NaN`.
    pub fn unary(&self, op: UnaryOp) -> Result<Tensor> {
        let out = self.map(|v| op.apply(v));
        if self.is_finite() && !out.is_finite() {
            return Err(Error::NonFinite(match op {
                UnaryOp::Log => "log",
                UnaryOp::Exp => "exp",
                _ => "unary op",
            }));
        }
        Ok(out)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| v.max(0.0))
    }

    /// Broadcasting binary op. `rhs` is broadcast into `self`'s shape: after
    /// left-padding with singleton dims, each `rhs` dim must equal the matching
    /// `self` dim or be 1. A one-element `rhs` acts as a scalar.
    pub fn binary(&self, op: BinaryOp, rhs: &Tensor) -> Result<Tensor> {
        let out = if rhs.shape == self.shape {
            Tensor {
                shape: self.shape.clone(),
                data: self
                    .data
                    .iter()
                    .zip(&rhs.data)
                    .map(|(&a, &b)| op.apply(a, b))
                    .collect(),
            }
        } else if rhs.data.len() == 1 {
            let b = rhs.data[0];
            self.map(|a| op.apply(a, b))
        } else {
            self.broadcast_binary(op, rhs)?
        };
        if op == BinaryOp::Div && rhs.data.contains(&0.0) {
            return Err(Error::NonFinite("division by zero"));
        }
        Ok(out)
    }

    fn broadcast_binary(&self, op: BinaryOp, rhs: &Tensor) -> Result<Tensor> {
        let rank = self.rank();
        if rhs.rank() > rank {
            return Err(Error::dim(format!(
                "cannot broadcast {:?} into {:?}",
                rhs.shape, self.shape
            )));
        }
        let mut padded = vec![1; rank - rhs.rank()];
        padded.extend_from_slice(&rhs.shape);
        for (a, b) in self.shape.iter().zip(&padded) {
            if *b != 1 && a != b {
                return Err(Error::dim(format!(
                    "cannot broadcast {:?} into {:?}",
                    rhs.shape, self.shape
                )));
            }
        }
        let rstr = strides(&padded);
        let eff: Vec<usize> = padded
            .iter()
            .zip(&rstr)
            .map(|(&d, &s)| if d == 1 { 0 } else { s })
            .collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; rank];
        let mut roff = 0usize;
        for &a in &self.data {
            data.push(op.apply(a, rhs.data[roff]));
            for d in (0..rank).rev() {
                idx[d] += 1;
                roff += eff[d];
                if idx[d] < self.shape[d] {
                    break;
                }
                roff -= eff[d] * idx[d];
                idx[d] = 0;
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn binary_scalar(&self, op: BinaryOp, b: f64) -> Result<Tensor> {
        self.binary(op, &Tensor::scalar(b))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(BinaryOp::Add, rhs)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(BinaryOp::Sub, rhs)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(BinaryOp::Mul, rhs)
    }

    /// Batched matrix product over the last two axes; leading batch axes
    /// broadcast numpy-style.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.rank() < 2 || rhs.rank() < 2 {
            return Err(Error::dim("matmul needs rank >= 2 operands"));
        }
        let (m, k) = (self.shape[self.rank() - 2], self.shape[self.rank() - 1]);
        let (k2, n) = (rhs.shape[rhs.rank() - 2], rhs.shape[rhs.rank() - 1]);
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.shape, rhs.shape
            )));
        }
        let abatch = &self.shape[..self.rank() - 2];
        let bbatch = &rhs.shape[..rhs.rank() - 2];
        let brank = abatch.len().max(bbatch.len());
        let pad = |b: &[usize]| {
            let mut v = vec![1; brank - b.len()];
            v.extend_from_slice(b);
            v
        };
        let (pa, pb) = (pad(abatch), pad(bbatch));
        let mut batch = Vec::with_capacity(brank);
        for (&x, &y) in pa.iter().zip(&pb) {
            if x != y && x != 1 && y != 1 {
                return Err(Error::dim(format!(
                    "matmul batch dims do not broadcast: {:?} x {:?}",
                    self.shape, rhs.shape
                )));
            }
            batch.push(x.max(y));
        }
        let nbatch = numel(&batch);
        let (sa, sb) = (strides(&pa), strides(&pb));
        let mut out = vec![0.0; nbatch * m * n];
        let mut idx = vec![0usize; brank];
        for bi in 0..nbatch {
            let mut oa = 0;
            let mut ob = 0;
            for d in 0..brank {
                if pa[d] != 1 {
                    oa += idx[d] * sa[d];
                }
                if pb[d] != 1 {
                    ob += idx[d] * sb[d];
                }
            }
            let a = &self.data[oa * m * k..(oa + 1) * m * k];
            let b = &rhs.data[ob * k * n..(ob + 1) * k * n];
            let o = &mut out[bi * m * n..(bi + 1) * m * n];
            for i in 0..m {
                for p in 0..k {
                    let av = a[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &b[p * n..(p + 1) * n];
                    for (ov, &bv) in o[i * n..(i + 1) * n].iter_mut().zip(brow) {
                        *ov += av * bv;
                    }
                }
            }
            for d in (0..brank).rev() {
                idx[d] += 1;
                if idx[d] < batch[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let mut shape = batch;
        shape.push(m);
        shape.push(n);
        Tensor::from_vec(&shape, out)
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Tensor {
        let r = self.rank();
        assert!(r >= 2, "transpose needs rank >= 2");
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    pub fn permute(&self, perm: &[usize]) -> Tensor {
        assert_eq!(perm.len(), self.rank(), "permutation rank mismatch");
        let src_strides = strides(&self.shape);
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let pstr: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; shape.len()];
        let mut off = 0usize;
        for _ in 0..self.data.len() {
            data.push(self.data[off]);
            for d in (0..shape.len()).rev() {
                idx[d] += 1;
                off += pstr[d];
                if idx[d] < shape[d] {
                    break;
                }
                off -= pstr[d] * idx[d];
                idx[d] = 0;
            }
        }
        Tensor { shape, data }
    }

    /// Split the shape into (outer, axis, inner) extents.
    fn axis_extents(&self, axis: usize) -> (usize, usize, usize) {
        let outer = numel(&self.shape[..axis]);
        let inner = numel(&self.shape[axis + 1..]);
        (outer, self.shape[axis], inner)
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis(self.rank(), axis)?;
        let (outer, len, inner) = self.axis_extents(axis);
        let mut out = self.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for j in 0..len {
                    mx = mx.max(self.data[base + j * inner]);
                }
                let mut s = 0.0;
                for j in 0..len {
                    let e = (self.data[base + j * inner] - mx).exp();
                    out[base + j * inner] = e;
                    s += e;
                }
                for j in 0..len {
                    out[base + j * inner] /= s;
                }
            }
        }
        Tensor::from_vec(&self.shape, out)
    }

    /// Reduces the given axes, keeping them as singleton dims.
    pub fn pool(&self, kind: PoolKind, axes: &[usize]) -> Result<Tensor> {
        let mut reduced = vec![false; self.rank()];
        for &a in axes {
            check_axis(self.rank(), a)?;
            reduced[a] = true;
        }
        let out_shape: Vec<usize> = self
            .shape
            .iter()
            .zip(&reduced)
            .map(|(&d, &r)| if r { 1 } else { d })
            .collect();
        let count: usize = self
            .shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| r)
            .map(|(&d, _)| d)
            .product();
        let ostr = strides(&out_shape);
        let init = match kind {
            PoolKind::Mean => 0.0,
            PoolKind::Max => f64::NEG_INFINITY,
        };
        let mut acc = vec![init; numel(&out_shape)];
        let mut idx = vec![0usize; self.rank()];
        for &v in &self.data {
            let mut o = 0;
            for d in 0..self.rank() {
                if !reduced[d] {
                    o += idx[d] * ostr[d];
                }
            }
            match kind {
                PoolKind::Mean => acc[o] += v,
                PoolKind::Max => acc[o] = acc[o].max(v),
            }
            for d in (0..self.rank()).rev() {
                idx[d] += 1;
                if idx[d] < self.shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        if kind == PoolKind::Mean {
            let c = count as f64;
            acc.iter_mut().for_each(|v| *v /= c);
        }
        Tensor::from_vec(&out_shape, acc)
    }

    /// Normalizes each 1-D slice along `axis` to zero mean and unit variance.
    pub fn layer_norm(&self, axis: usize, eps: f64) -> Result<Tensor> {
        check_axis(self.rank(), axis)?;
        let (outer, len, inner) = self.axis_extents(axis);
        let mut out = self.data.clone();
        let n = len as f64;
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mean = (0..len).map(|j| self.data[base + j * inner]).sum::<f64>() / n;
                let var = (0..len)
                    .map(|j| {
                        let d = self.data[base + j * inner] - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / n;
                let inv = 1.0 / (var + eps).sqrt();
                for j in 0..len {
                    out[base + j * inner] = (self.data[base + j * inner] - mean) * inv;
                }
            }
        }
        Tensor::from_vec(&self.shape, out)
    }

    /// Group normalization of a `[B, C, ...]` tensor: statistics per
    /// (batch, channel group) over the group's channels and all trailing axes.
    pub fn group_norm(&self, groups: usize, eps: f64) -> Result<Tensor> {
        if self.rank() < 2 {
            return Err(Error::dim("group norm needs [B, C, ...]"));
        }
        let c = self.shape[1];
        if groups == 0 || !c.is_multiple_of(groups) {
            return Err(Error::dim(format!(
                "{c} channels not divisible into {groups} groups"
            )));
        }
        let b = self.shape[0];
        let block = (c / groups) * numel(&self.shape[2..]);
        let mut out = self.data.clone();
        for chunk in out.chunks_mut(block).take(b * groups) {
            let n = chunk.len() as f64;
            let mean = chunk.iter().sum::<f64>() / n;
            let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            chunk.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        }
        Tensor::from_vec(&self.shape, out)
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat of zero tensors"))?;
        check_axis(first.rank(), axis)?;
        for p in parts {
            let same = p.rank() == first.rank()
                && p
                    .shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !same {
                return Err(Error::dim(format!(
                    "concat shape mismatch: {:?} vs {:?} on axis {axis}",
                    p.shape, first.shape
                )));
            }
        }
        let outer = numel(&first.shape[..axis]);
        let inner = numel(&first.shape[axis + 1..]);
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let block = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Tensor::from_vec(&shape, data)
    }

    /// Contiguous slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        check_axis(self.rank(), axis)?;
        if len == 0 || start + len > self.shape[axis] {
            return Err(Error::dim(format!(
                "narrow [{start}, {}) out of range for axis {axis} of {:?}",
                start + len,
                self.shape
            )));
        }
        let (outer, full, inner) = self.axis_extents(axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Tensor::from_vec(&shape, data)
    }

    /// Splits along `axis` into consecutive chunks of the given sizes.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor>> {
        check_axis(self.rank(), axis)?;
        if sizes.iter().sum::<usize>() != self.shape[axis] {
            return Err(Error::dim(format!(
                "split sizes {sizes:?} do not cover axis {axis} of {:?}",
                self.shape
            )));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            out.push(self.narrow(axis, start, s)?);
            start += s;
        }
        Ok(out)
    }

    /// `[B, C, H, W]` map to `[B, H·W, C]` tokens.
    pub fn to_tokens(&self) -> Result<Tensor> {
        let [b, c, h, w] = self.dims4()?;
        self.permute(&[0, 2, 3, 1]).into_shape(&[b, h * w, c])
    }

    /// `[B, N, C]` tokens back to a `[B, C, H, W]` map.
    pub fn from_tokens(&self, h: usize, w: usize) -> Result<Tensor> {
        if self.rank() != 3 || self.shape[1] != h * w {
            return Err(Error::dim(format!(
                "tokens {:?} do not match a {h}x{w} map",
                self.shape
            )));
        }
        let (b, c) = (self.shape[0], self.shape[2]);
        Ok(self.reshape(&[b, h, w, c])?.permute(&[0, 3, 1, 2]))
    }

    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape.as_slice() {
            &[b, c, h, w] => Ok([b, c, h, w]),
            s => Err(Error::dim(format!("expected [B, C, H, W], got {s:?}"))),
        }
    }

    /// Pads a `[B, C, H, W]` map at the bottom/right by edge replication.
    pub fn pad_replicate(&self, new_h: usize, new_w: usize) -> Result<Tensor> {
        let [b, c, h, w] = self.dims4()?;
        if new_h < h || new_w < w {
            return Err(Error::dim("pad target smaller than input"));
        }
        Ok(Tensor::from_fn(&[b, c, new_h, new_w], |i| {
            self.at(&[i[0], i[1], i[2].min(h - 1), i[3].min(w - 1)])
        }))
    }

    /// Top-left `new_h × new_w` crop of a `[B, C, H, W]` map.
    pub fn crop(&self, new_h: usize, new_w: usize) -> Result<Tensor> {
        self.narrow(2, 0, new_h)?.narrow(3, 0, new_w)
    }
}
