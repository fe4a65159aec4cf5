//! Binary PPM (P6) / PGM (P5) images with maxval 255.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageKind {
    /// P6 → `[3, H, W]` in `[0, 1]`.
    PpmRgb,
    /// P5 → `[1, H, W]` in `[0, 1]`.
    PgmGray,
    /// P5 → `[H, W]` of raw byte values (class ids).
    PgmMask,
}

impl ImageKind {
    fn magic(self) -> &'static [u8; 2] {
        match self {
            ImageKind::PpmRgb => b"P6",
            ImageKind::PgmGray | ImageKind::PgmMask => b"P5",
        }
    }

    fn channels(self) -> usize {
        match self {
            ImageKind::PpmRgb => 3,
            _ => 1,
        }
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn image_dims(t: &Tensor, kind: ImageKind) -> Result<(usize, usize)> {
    match (kind, t.shape()) {
        (ImageKind::PpmRgb, [3, h, w]) | (ImageKind::PgmGray, [1, h, w]) | (ImageKind::PgmMask, [h, w]) => {
            Ok((*h, *w))
        }
        (_, s) => Err(Error::dim(format!("tensor {s:?} cannot be written as {kind:?}"))),
    }
}

pub fn encode_image(t: &Tensor, kind: ImageKind) -> Result<Vec<u8>> {
    let (h, w) = image_dims(t, kind)?;
    let mut out = format!("{}\n{w} {h}\n255\n", std::str::from_utf8(kind.magic()).expect("ascii magic")).into_bytes();
    let plane = h * w;
    let d = t.data();
    match kind {
        ImageKind::PpmRgb => {
            for p in 0..plane {
                out.extend((0..3).map(|c| quantize(d[c * plane + p])));
            }
        }
        ImageKind::PgmGray => out.extend(d.iter().map(|&v| quantize(v))),
        ImageKind::PgmMask => {
            for &v in d {
                if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                    return Err(Error::Config(format!("mask value {v} is not a byte")));
                }
                out.push(v as u8);
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    /// Skips whitespace and `#` comments between header fields.
    fn skip_blank(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_blank();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("digits")
            .parse()
            .map_err(|_| Error::Parse {
                offset: start,
                message: format!("{what} out of range"),
            })
    }
}

pub fn decode_image(bytes: &[u8], kind: ImageKind) -> Result<Tensor> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.get(..2) != Some(kind.magic().as_slice()) {
        return Err(cur.err(format!("expected {} magic", String::from_utf8_lossy(kind.magic()))));
    }
    cur.pos = 2;
    let w = cur.number("width")?;
    let h = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if w == 0 || h == 0 {
        return Err(cur.err("zero image dimension"));
    }
    if maxval != 255 {
        return Err(cur.err(format!("unsupported maxval {maxval}")));
    }
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(cur.err("expected whitespace after header"));
    }
    cur.pos += 1;
    let c = kind.channels();
    let need = h * w * c;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("truncated payload: {} of {need} bytes", payload.len()),
        });
    }
    let plane = h * w;
    Ok(match kind {
        ImageKind::PpmRgb => Tensor::from_fn(&[3, h, w], |i| {
            payload[(i[1] * w + i[2]) * 3 + i[0]] as f64 / 255.0
        }),
        ImageKind::PgmGray => Tensor::from_vec(&[1, h, w], payload[..plane].iter().map(|&b| b as f64 / 255.0).collect())?,
        ImageKind::PgmMask => Tensor::from_vec(&[h, w], payload[..plane].iter().map(|&b| b as f64).collect())?,
    })
}

pub fn write_image(path: &Path, t: &Tensor, kind: ImageKind) -> Result<()> {
    let bytes = encode_image(t, kind)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_image(path: &Path, kind: ImageKind) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, kind)
}
