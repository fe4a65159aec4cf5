//! Wavelet and Fourier transforms for the frequency branch.

mod dwt;
mod fft;

pub use dwt::{dwt2, idwt2, rearrange_subbands, split_subbands, Band, SubbandSet};
pub use fft::{fft2_inplace, fft_inplace, fft_refine, refine_spectrum, FftRefineParams, Spectrum};
