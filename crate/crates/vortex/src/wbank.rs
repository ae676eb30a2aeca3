//! VPWB weight-bank files.
//!
//! `VPWB`, version `u32` = 1, entry count `u32`, then per entry: name length
//! `u16`, UTF-8 name, dtype byte, `out_c in_c kh kw` as `u32`, weights in
//! `[out_c][in_c][kh][kw]` order, then `out_c` biases. Entries are written in
//! name order. Integers and values are little-endian.

use std::fs;
use std::path::Path;

use vortex_core::{DType, WeightBank, WeightTensor};

use crate::fmap::{get_values, put_value, u32_at};
use crate::FormatError;

pub const MAGIC: [u8; 4] = *b"VPWB";
pub const VERSION: u32 = 1;

pub fn encode(bank: &WeightBank) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(bank.len()).map_err(|_| FormatError::DimensionTooLarge(bank.len()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in bank.iter() {
        let len = u16::try_from(name.len()).map_err(|_| FormatError::NameTooLong(name.len()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.dtype().code());
        for d in [t.out_c(), t.in_c(), t.kh(), t.kw()] {
            let d = u32::try_from(d).map_err(|_| FormatError::DimensionTooLarge(d))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in t.weights().iter().chain(t.bias()) {
            put_value(&mut out, t.dtype(), v);
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(FormatError::Truncated { expected: self.pos.saturating_add(n), actual: self.bytes.len() })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32_at(self.take(4)?, 0))
    }
}

pub fn decode(bytes: &[u8]) -> Result<WeightBank, FormatError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4)?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic { expected: MAGIC, found: magic.try_into().unwrap() });
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let count = cur.u32()?;
    let mut bank = WeightBank::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(cur.take(len)?).map_err(|_| FormatError::BadName)?.to_owned();
        let code = cur.take(1)?[0];
        let dtype = DType::from_code(code).ok_or(FormatError::BadDType(code))?;
        let (out_c, in_c, kh, kw) = (cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize);
        if out_c == 0 || in_c == 0 || kh == 0 || kw == 0 {
            return Err(FormatError::ZeroDimension { h: kh, w: kw, c: out_c.min(in_c) });
        }
        let n = out_c
            .checked_mul(in_c)
            .and_then(|n| n.checked_mul(kh))
            .and_then(|n| n.checked_mul(kw))
            .ok_or(FormatError::DimensionTooLarge(out_c.max(in_c)))?;
        let weights = get_values(cur.take(n.saturating_mul(dtype.size_bytes()))?, dtype);
        let bias = get_values(cur.take(out_c * dtype.size_bytes())?, dtype);
        let tensor = WeightTensor::new(out_c, in_c, kh, kw, dtype, weights, bias)?;
        if bank.insert(name.clone(), tensor).is_some() {
            return Err(FormatError::DuplicateEntry(name));
        }
    }
    if cur.pos != bytes.len() {
        return Err(FormatError::TrailingBytes(bytes.len() - cur.pos));
    }
    Ok(bank)
}

pub fn wbank_read(path: impl AsRef<Path>) -> Result<WeightBank, FormatError> {
    decode(&fs::read(path)?)
}

pub fn wbank_write(bank: &WeightBank, path: impl AsRef<Path>) -> Result<(), FormatError> {
    fs::write(path, encode(bank)?)?;
    Ok(())
}
