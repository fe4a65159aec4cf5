//! Simplified 2-D selective scan.
//!
//! Each pixel's channel vector `x_t` drives an input-dependent linear
//! recurrence with a `C × N` state:
//!
//! ```text
//! a_t = sigmoid(x_t · W_decay)        per channel, in (0, 1)
//! b_t = x_t · W_input                 length N
//! h_t[c, :] = a_t[c] · h_{t-1}[c, :] + b_t · x_t[c]
//! y_t[c]    = <w_out, h_t[c, :]>
//! ```
//!
//! The map is flattened in four orders (row-major, column-major and both
//! reversed) and the four outputs are averaged. In windowed mode the scan
//! restarts in every non-overlapping window.

use crate::error::{Error, Result};
use crate::rng::ParamSet;
use crate::tensor::{sigmoid, Linear, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ScanParams {
    /// `C → C`, squashed by a sigmoid into per-channel decay.
    pub decay: Linear,
    /// `C → N` input projection.
    pub input: Linear,
    /// Read-out weights over the state, length `N`.
    pub output: Vec<f64>,
}

impl ScanParams {
    pub fn init(ps: &ParamSet, channels: usize, state_dim: usize) -> Self {
        ScanParams {
            decay: ps.linear("decay", channels, channels),
            input: ps.linear("input", channels, state_dim),
            output: ps
                .uniform("output", &[state_dim], 1.0 / (state_dim as f64).sqrt())
                .into_data(),
        }
    }

    /// All-zero weights: decay 0.5, no input, zero output.
    pub fn zeros(channels: usize, state_dim: usize) -> Self {
        ScanParams {
            decay: Linear::zeros(channels, channels),
            input: Linear::zeros(channels, state_dim),
            output: vec![0.0; state_dim],
        }
    }

    pub fn state_dim(&self) -> usize {
        self.output.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanDirection {
    RowMajor,
    ColumnMajor,
    RowMajorReversed,
    ColumnMajorReversed,
}

impl ScanDirection {
    pub const ALL: [ScanDirection; 4] = [
        ScanDirection::RowMajor,
        ScanDirection::ColumnMajor,
        ScanDirection::RowMajorReversed,
        ScanDirection::ColumnMajorReversed,
    ];

    /// Visiting order of the `(row, col)` cells of an `h × w` window.
    fn order(self, h: usize, w: usize) -> Vec<(usize, usize)> {
        let row_major = || (0..h).flat_map(move |i| (0..w).map(move |j| (i, j)));
        let col_major = || (0..w).flat_map(move |j| (0..h).map(move |i| (i, j)));
        match self {
            ScanDirection::RowMajor => row_major().collect(),
            ScanDirection::ColumnMajor => col_major().collect(),
            ScanDirection::RowMajorReversed => row_major().rev().collect(),
            ScanDirection::ColumnMajorReversed => col_major().rev().collect(),
        }
    }
}

struct Projected {
    /// `[B, H·W, C]` decay factors.
    decay: Tensor,
    /// `[B, H·W, N]` input coefficients.
    input: Tensor,
}

fn project(x: &Tensor, p: &ScanParams) -> Result<(Tensor, Projected)> {
    let tokens = x.to_tokens()?;
    let decay = p.decay.forward(&tokens)?.map(sigmoid);
    let input = p.input.forward(&tokens)?;
    Ok((tokens, Projected { decay, input }))
}

fn resolve_window(h: usize, w: usize, window: Option<Window>) -> Result<(usize, usize)> {
    match window {
        None => Ok((h, w)),
        Some(win) => {
            if win.height == 0 || win.width == 0 || !h.is_multiple_of(win.height) || !w.is_multiple_of(win.width) {
                return Err(Error::dim(format!(
                    "window {}x{} does not tile a {h}x{w} map",
                    win.height, win.width
                )));
            }
            Ok((win.height, win.width))
        }
    }
}

fn run_direction(
    tokens: &Tensor,
    proj: &Projected,
    p: &ScanParams,
    dims: [usize; 4],
    win: (usize, usize),
    dir: ScanDirection,
    out: &mut [f64],
    weight: f64,
) {
    let [b, c, h, w] = dims;
    let n = p.state_dim();
    let (wh, ww) = win;
    let order = dir.order(wh, ww);
    let (td, ad, bd) = (tokens.data(), proj.decay.data(), proj.input.data());
    let mut state = vec![0.0; c * n];
    for bi in 0..b {
        for oy in (0..h).step_by(wh) {
            for ox in (0..w).step_by(ww) {
                state.iter_mut().for_each(|s| *s = 0.0);
                for &(dy, dx) in &order {
                    let t = bi * h * w + (oy + dy) * w + (ox + dx);
                    let xt = &td[t * c..(t + 1) * c];
                    let at = &ad[t * c..(t + 1) * c];
                    let bt = &bd[t * n..(t + 1) * n];
                    for ch in 0..c {
                        let row = &mut state[ch * n..(ch + 1) * n];
                        let mut y = 0.0;
                        for k in 0..n {
                            row[k] = at[ch] * row[k] + bt[k] * xt[ch];
                            y += p.output[k] * row[k];
                        }
                        let pix = (oy + dy) * w + (ox + dx);
                        out[(bi * c + ch) * h * w + pix] += weight * y;
                    }
                }
            }
        }
    }
}

/// One directional pass, exposed for causality checks.
pub fn scan_direction(
    x: &Tensor,
    p: &ScanParams,
    dir: ScanDirection,
    window: Option<Window>,
) -> Result<Tensor> {
    let dims = x.dims4()?;
    let win = resolve_window(dims[2], dims[3], window)?;
    let (tokens, proj) = project(x, p)?;
    let mut out = vec![0.0; x.len()];
    run_direction(&tokens, &proj, p, dims, win, dir, &mut out, 1.0);
    Tensor::from_vec(x.shape(), out)
}

/// Four-direction scan averaged into a map of the input's shape.
pub fn ss2d(x: &Tensor, p: &ScanParams, window: Option<Window>) -> Result<Tensor> {
    let dims = x.dims4()?;
    if p.decay.d_in() != dims[1] {
        return Err(Error::dim(format!(
            "scan parameters expect {} channels, got {}",
            p.decay.d_in(),
            dims[1]
        )));
    }
    let win = resolve_window(dims[2], dims[3], window)?;
    let (tokens, proj) = project(x, p)?;
    let mut out = vec![0.0; x.len()];
    for dir in ScanDirection::ALL {
        run_direction(&tokens, &proj, p, dims, win, dir, &mut out, 0.25);
    }
    Tensor::from_vec(x.shape(), out)
}
