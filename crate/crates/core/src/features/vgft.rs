//! VGFT: per-video segment features as a `[T, H, W, C]` array.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field                              |
//! |--------|------|------------------------------------|
//! | 0      | 4    | magic `VGFT`                       |
//! | 4      | 2    | version (u16) = 1                  |
//! | 6      | 16   | T, H, W, C (u32 each)              |
//! | 22     | 4·n  | payload, f32, row-major [T,H,W,C]  |
//! | 22+4n  | 4    | CRC-32 (IEEE) of the payload bytes |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"VGFT";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 22;

pub fn encode_features<T: Scalar>(features: &Tensor<T>) -> Result<Vec<u8>> {
    if features.rank() != 4 {
        return Err(Error::shape("write_feature_file", format!("expected [T,H,W,C], got {:?}", features.shape())));
    }
    let mut payload = Vec::with_capacity(features.len() * 4);
    for &v in features.data() {
        let f = v
            .to_f32()
            .filter(|f| f.is_finite())
            .ok_or_else(|| Error::NonFinite("feature tensor (value not representable as finite f32)".into()))?;
        payload.extend_from_slice(&f.to_le_bytes());
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for &d in features.shape() {
        let d = u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("axis length {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    let crc = crc32fast::hash(&payload);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format { offset: 0, detail: "bad magic, expected \"VGFT\"".into() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            detail: format!("header truncated: {} of {HEADER_LEN} bytes", bytes.len()),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Version { found: version.into(), expected: VERSION.into() });
    }
    let dims: Vec<usize> = (0..4)
        .map(|i| {
            let o = 6 + 4 * i;
            u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize
        })
        .collect();
    if let Some(ax) = dims.iter().position(|&d| d == 0) {
        return Err(Error::Format { offset: 6 + 4 * ax as u64, detail: "axis length must be positive".into() });
    }
    let expected = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
        .ok_or_else(|| Error::Format { offset: 6, detail: format!("declared shape {dims:?} overflows") })?;
    let body = (bytes.len() - HEADER_LEN) as u64;
    let actual = body.saturating_sub(4) / 4;
    if body < 4 || body != expected * 4 + 4 {
        return Err(Error::Size { expected, actual });
    }
    let n = expected as usize;
    let payload = &bytes[HEADER_LEN..HEADER_LEN + 4 * n];
    let stored = u32::from_le_bytes(bytes[HEADER_LEN + 4 * n..].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let data: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("VGFT payload value {pos}")));
    }
    Tensor::new(dims, data)
}

pub fn write_feature_file<T: Scalar>(path: impl AsRef<Path>, features: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_features(features)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_features(&bytes)?.cast())
}
