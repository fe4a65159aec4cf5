//! Orthonormal 2-D Haar analysis/synthesis and the wavelet-image tiling.
//!
//! Band naming: the first letter is the filter along width, the second along
//! height. `HL` is high-pass across columns and therefore responds to vertical
//! edges; `LH` responds to horizontal edges.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Band {
    LH,
    HL,
    HH,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::LH, Band::HL, Band::HH];

    fn index(self) -> usize {
        match self {
            Band::LH => 0,
            Band::HL => 1,
            Band::HH => 2,
        }
    }
}

/// Multi-level decomposition. `details[0]` holds the finest level (level 1).
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandSet {
    pub ll: Tensor,
    pub details: Vec<[Tensor; 3]>,
}

impl SubbandSet {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// Detail band at `level` (1-based, 1 = finest).
    pub fn detail(&self, level: usize, band: Band) -> &Tensor {
        &self.details[level - 1][band.index()]
    }

    pub fn detail_mut(&mut self, level: usize, band: Band) -> &mut Tensor {
        &mut self.details[level - 1][band.index()]
    }

    pub fn energy(&self) -> f64 {
        let sq = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>();
        sq(&self.ll) + self.details.iter().flatten().map(sq).sum::<f64>()
    }

    pub fn map(&self, f: impl Fn(&Tensor) -> Tensor) -> SubbandSet {
        SubbandSet {
            ll: f(&self.ll),
            details: self
                .details
                .iter()
                .map(|[a, b, c]| [f(a), f(b), f(c)])
                .collect(),
        }
    }
}

fn haar_level(x: &Tensor) -> Result<(Tensor, [Tensor; 3])> {
    let [b, c, h, w] = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!("Haar level needs even dims, got {h}x{w}")));
    }
    let (h2, w2) = (h / 2, w / 2);
    let n = b * c * h2 * w2;
    let (mut ll, mut lh, mut hl, mut hh) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    let xd = x.data();
    for plane in 0..b * c {
        let p = &xd[plane * h * w..(plane + 1) * h * w];
        for i in 0..h2 {
            for j in 0..w2 {
                let a = p[2 * i * w + 2 * j];
                let bb = p[2 * i * w + 2 * j + 1];
                let cc = p[(2 * i + 1) * w + 2 * j];
                let d = p[(2 * i + 1) * w + 2 * j + 1];
                ll.push(0.5 * (a + bb + cc + d));
                lh.push(0.5 * (a + bb - cc - d));
                hl.push(0.5 * (a - bb + cc - d));
                hh.push(0.5 * (a - bb - cc + d));
            }
        }
    }
    let shape = [b, c, h2, w2];
    Ok((
        Tensor::from_vec(&shape, ll)?,
        [
            Tensor::from_vec(&shape, lh)?,
            Tensor::from_vec(&shape, hl)?,
            Tensor::from_vec(&shape, hh)?,
        ],
    ))
}

fn haar_inverse_level(ll: &Tensor, bands: &[Tensor; 3]) -> Result<Tensor> {
    let [b, c, h2, w2] = ll.dims4()?;
    for t in bands {
        if t.shape() != ll.shape() {
            return Err(Error::dim(format!(
                "sub-band shape {:?} differs from approximation {:?}",
                t.shape(),
                ll.shape()
            )));
        }
    }
    let (h, w) = (2 * h2, 2 * w2);
    let mut out = vec![0.0; b * c * h * w];
    let (l, lh, hl, hh) = (ll.data(), bands[0].data(), bands[1].data(), bands[2].data());
    for plane in 0..b * c {
        let o = &mut out[plane * h * w..(plane + 1) * h * w];
        for i in 0..h2 {
            for j in 0..w2 {
                let k = plane * h2 * w2 + i * w2 + j;
                let (s, v, u, d) = (l[k], lh[k], hl[k], hh[k]);
                o[2 * i * w + 2 * j] = 0.5 * (s + v + u + d);
                o[2 * i * w + 2 * j + 1] = 0.5 * (s + v - u - d);
                o[(2 * i + 1) * w + 2 * j] = 0.5 * (s - v + u - d);
                o[(2 * i + 1) * w + 2 * j + 1] = 0.5 * (s - v - u + d);
            }
        }
    }
    Tensor::from_vec(&[b, c, h, w], out)
}

/// Multi-level orthonormal Haar decomposition of `[B, C, H, W]`; each level
/// decomposes the previous approximation band.
pub fn dwt2(x: &Tensor, levels: usize) -> Result<SubbandSet> {
    let [_, _, h, w] = x.dims4()?;
    let m = 1usize << levels;
    if levels == 0 || h % m != 0 || w % m != 0 {
        return Err(Error::dim(format!(
            "{h}x{w} is not divisible by 2^{levels} for a {levels}-level DWT"
        )));
    }
    let mut ll = x.clone();
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (next, bands) = haar_level(&ll)?;
        details.push(bands);
        ll = next;
    }
    Ok(SubbandSet { ll, details })
}

pub fn idwt2(s: &SubbandSet) -> Result<Tensor> {
    let mut x = s.ll.clone();
    for bands in s.details.iter().rev() {
        x = haar_inverse_level(&x, bands)?;
    }
    Ok(x)
}

fn place(dst: &mut Tensor, src: &Tensor, row0: usize, col0: usize) {
    let [b, c, hd, wd] = dst.dims4().expect("rank-4 destination");
    let (hs, ws) = (src.dim(2), src.dim(3));
    let sd = src.data();
    let dd = dst.data_mut();
    for plane in 0..b * c {
        for i in 0..hs {
            let d0 = plane * hd * wd + (row0 + i) * wd + col0;
            let s0 = plane * hs * ws + i * ws;
            dd[d0..d0 + ws].copy_from_slice(&sd[s0..s0 + ws]);
        }
    }
}

fn take(src: &Tensor, row0: usize, col0: usize, h: usize, w: usize) -> Result<Tensor> {
    src.narrow(2, row0, h)?.narrow(3, col0, w)
}

/// Tiles the sub-bands into the standard wavelet-image layout: the coarsest
/// approximation sits top-left, and each level `j` puts `HL` top-right,
/// `LH` bottom-left and `HH` bottom-right of its `H/2^(j-1)` quadrant.
pub fn rearrange_subbands(s: &SubbandSet) -> Result<Tensor> {
    let [b, c, h2, w2] = s.details[0][0].dims4()?;
    let (h, w) = (2 * h2, 2 * w2);
    let mut out = Tensor::zeros(&[b, c, h, w]);
    place(&mut out, &s.ll, 0, 0);
    for (lvl, bands) in s.details.iter().enumerate() {
        let (bh, bw) = (h >> (lvl + 1), w >> (lvl + 1));
        if bands.iter().any(|t| t.shape() != [b, c, bh, bw]) {
            return Err(Error::dim("inconsistent sub-band shapes"));
        }
        place(&mut out, &bands[Band::HL.index()], 0, bw);
        place(&mut out, &bands[Band::LH.index()], bh, 0);
        place(&mut out, &bands[Band::HH.index()], bh, bw);
    }
    Ok(out)
}

/// Exact inverse of [`rearrange_subbands`].
pub fn split_subbands(t: &Tensor, levels: usize) -> Result<SubbandSet> {
    let [_, _, h, w] = t.dims4()?;
    let m = 1usize << levels;
    if levels == 0 || h % m != 0 || w % m != 0 {
        return Err(Error::dim(format!("{h}x{w} cannot hold {levels} wavelet levels")));
    }
    let mut details = Vec::with_capacity(levels);
    for lvl in 0..levels {
        let (bh, bw) = (h >> (lvl + 1), w >> (lvl + 1));
        details.push([
            take(t, bh, 0, bh, bw)?,
            take(t, 0, bw, bh, bw)?,
            take(t, bh, bw, bh, bw)?,
        ]);
    }
    Ok(SubbandSet {
        ll: take(t, 0, 0, h / m, w / m)?,
        details,
    })
}
