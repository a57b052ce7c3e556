//! Named parameter tensors on disk.
//!
//! Layout, little-endian: `b"MMPR"`, version `u32` (1), tensor count `u32`,
//! then per tensor: name length `u32`, UTF-8 name, rows `u64`, cols `u64`,
//! `rows * cols` f64 values row-major.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const PARAMS_MAGIC: [u8; 4] = *b"MMPR";
pub const PARAMS_VERSION: u32 = 1;

pub fn encode_params(tensors: &[(String, Array2<f64>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&PARAMS_MAGIC);
    out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, value) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(value.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(value.ncols() as u64).to_le_bytes());
        for v in value.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::ParamFile(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<Vec<(String, Array2<f64>)>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != PARAMS_MAGIC {
        return Err(Error::ParamFile("bad magic".into()));
    }
    let version = c.u32()?;
    if version != PARAMS_VERSION {
        return Err(Error::ParamFile(format!("unsupported version {version}")));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::ParamFile("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = c.u64()? as usize;
        let cols = c.u64()? as usize;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::ParamFile(format!("tensor `{name}` shape overflows")))?;
        let data: Vec<f64> = c
            .take(n)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let value = Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::ParamFile(e.to_string()))?;
        out.push((name, value));
    }
    if c.pos != bytes.len() {
        return Err(Error::ParamFile(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(out)
}

pub fn save_params(path: &Path, tensors: &[(String, Array2<f64>)]) -> Result<()> {
    fs::write(path, encode_params(tensors)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<Vec<(String, Array2<f64>)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_and_truncation() {
        let tensors = vec![
            ("embedding".to_string(), array![[0.1, -0.2], [1e-300, 3.0]]),
            ("encoder.text.0.bias".to_string(), array![[0.0, -0.0, 5.5]]),
        ];
        let bytes = encode_params(&tensors);
        let back = decode_params(&bytes).unwrap();
        assert_eq!(back, tensors);
        assert!(back[1].1[[0, 1]].is_sign_negative());
        assert!(decode_params(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_params(&extra).is_err());
        assert!(decode_params(b"NOPE").is_err());
    }
}
