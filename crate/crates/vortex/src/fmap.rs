//! FMAP tensor files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes  | field                               |
//! |--------|-------------------------------------|
//! | 0..4   | magic `VPFM`                        |
//! | 4..8   | version, `u32` = 1                  |
//! | 8      | dtype code, 0 = f32, 1 = f64        |
//! | 9..12  | zero padding                        |
//! | 12..24 | `h`, `w`, `c` as `u32`              |
//! | 24..   | `h*w*c` IEEE-754 values, map layout |

use std::fs;
use std::path::Path;

use vortex_core::{DType, FeatureMap};

use crate::FormatError;

pub const MAGIC: [u8; 4] = *b"VPFM";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

/// Encoded size of an `h x w x c` map.
pub fn encoded_len(h: usize, w: usize, c: usize, dtype: DType) -> usize {
    HEADER_LEN + h * w * c * dtype.size_bytes()
}

pub(crate) fn put_value(out: &mut Vec<u8>, dtype: DType, v: f64) {
    match dtype {
        DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
        DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
    }
}

pub(crate) fn get_values(bytes: &[u8], dtype: DType) -> Vec<f64> {
    match dtype {
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect(),
    }
}

fn dim_u32(v: usize) -> Result<u32, FormatError> {
    u32::try_from(v).map_err(|_| FormatError::DimensionTooLarge(v))
}

pub fn encode(map: &FeatureMap) -> Result<Vec<u8>, FormatError> {
    let (h, w, c) = map.shape();
    let dtype = map.dtype();
    let mut out = Vec::with_capacity(encoded_len(h, w, c, dtype));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&[dtype.code(), 0, 0, 0]);
    for d in [h, w, c] {
        out.extend_from_slice(&dim_u32(d)?.to_le_bytes());
    }
    for &v in map.data() {
        put_value(&mut out, dtype, v);
    }
    Ok(out)
}

pub(crate) fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode(bytes: &[u8]) -> Result<FeatureMap, FormatError> {
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated { expected: HEADER_LEN, actual: bytes.len() });
    }
    if bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic { expected: MAGIC, found: bytes[..4].try_into().unwrap() });
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let dtype = DType::from_code(bytes[8]).ok_or(FormatError::BadDType(bytes[8]))?;
    if bytes[9..12] != [0, 0, 0] {
        return Err(FormatError::NonZeroPadding);
    }
    let (h, w, c) = (u32_at(bytes, 12) as usize, u32_at(bytes, 16) as usize, u32_at(bytes, 20) as usize);
    if h == 0 || w == 0 || c == 0 {
        return Err(FormatError::ZeroDimension { h, w, c });
    }
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .and_then(|n| n.checked_mul(dtype.size_bytes()))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or(FormatError::DimensionTooLarge(h.max(w).max(c)))?;
    if bytes.len() < expected {
        return Err(FormatError::Truncated { expected, actual: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes(bytes.len() - expected));
    }
    Ok(FeatureMap::new(h, w, c, dtype, get_values(&bytes[HEADER_LEN..], dtype))?)
}

pub fn fmap_read(path: impl AsRef<Path>) -> Result<FeatureMap, FormatError> {
    decode(&fs::read(path)?)
}

pub fn fmap_write(map: &FeatureMap, path: impl AsRef<Path>) -> Result<(), FormatError> {
    fs::write(path, encode(map)?)?;
    Ok(())
}
