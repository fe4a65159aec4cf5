//! Binary tensor fixtures: `"MCLT"`, `u32` rank, `rank × u32` dims, then
//! little-endian `f64` values in row-major order.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const FIXTURE_MAGIC: &[u8; 4] = b"MCLT";

pub fn encode_fixture(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 8 * t.len());
    out.extend_from_slice(FIXTURE_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_fixture(bytes: &[u8]) -> Result<Tensor> {
    let take_u32 = |off: usize| -> Result<u32> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::Parse {
                offset: bytes.len(),
                message: "truncated fixture header".into(),
            })
    };
    if bytes.len() < 4 || &bytes[..4] != FIXTURE_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "missing MCLT magic".into(),
        });
    }
    let rank = take_u32(4)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        shape.push(take_u32(8 + 4 * i)? as usize);
    }
    let start = 8 + 4 * rank;
    let n: usize = shape.iter().product();
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() != 8 * n {
        return Err(Error::Parse {
            offset: start + payload.len(),
            message: format!("expected {} payload bytes, found {}", 8 * n, payload.len()),
        });
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::from_vec(&shape, data)
}

pub fn write_fixture(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_fixture(t)).map_err(|e| Error::io(path, e))
}

pub fn read_fixture(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_fixture(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_bit_exact() {
        let t = Tensor::from_vec(&[1, 2], vec![1.0, -0.5]).unwrap();
        let b = encode_fixture(&t);
        assert_eq!(&b[..4], b"MCLT");
        assert_eq!(&b[4..8], &2u32.to_le_bytes());
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..16], &2u32.to_le_bytes());
        assert_eq!(&b[16..24], &1.0f64.to_le_bytes());
        assert_eq!(b.len(), 32);
        assert_eq!(decode_fixture(&b).unwrap(), t);
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let t = Tensor::ones(&[3]);
        let mut b = encode_fixture(&t);
        b.truncate(b.len() - 3);
        match decode_fixture(&b) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, b.len()),
            other => panic!("unexpected {other:?}"),
        }
    }
}
