//! Little-endian named-tensor container used by checkpoints.
//!
//! Layout: magic `GTFMNTSR`, `u32` format version, `u32` entry count, then
//! per entry: `u32` name length + UTF-8 name, `u8` dtype code, `u32` rank,
//! `u64` extents, raw row-major payload.

use std::io::{Read, Write};

use crate::element::{DType, Element};
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"GTFMNTSR";
pub const FORMAT_VERSION: u32 = 1;

/// A tensor read back from disk, in whatever dtype it was stored with.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    pub fn dtype(&self) -> DType {
        match self {
            StoredTensor::F32(_) => DType::F32,
            StoredTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::F64(t) => t.shape(),
        }
    }

    /// Converts to `T`; exact when the stored dtype already is `T`.
    pub fn into_tensor<T: Element>(self) -> Tensor<T> {
        match self {
            StoredTensor::F32(t) => t.cast(),
            StoredTensor::F64(t) => t.cast(),
        }
    }
}

pub fn write_tensors<T: Element, W: Write>(
    out: &mut W,
    entries: &[(&str, &Tensor<T>)],
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&u32::try_from(entries.len()).map_err(fmt_err)?.to_le_bytes());
    for (name, tensor) in entries {
        let name = name.as_bytes();
        buf.extend_from_slice(&u32::try_from(name.len()).map_err(fmt_err)?.to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(T::DTYPE.code());
        buf.extend_from_slice(&u32::try_from(tensor.rank()).map_err(fmt_err)?.to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            v.write_le(&mut buf);
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

fn fmt_err(e: impl std::fmt::Display) -> TensorError {
    TensorError::Format(e.to_string())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| TensorError::Format("truncated tensor container".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode<T: Element>(shape: &[usize], raw: &[u8]) -> Result<Tensor<T>> {
    let size = T::DTYPE.size_of();
    Tensor::from_vec(shape, raw.chunks_exact(size).map(T::read_le).collect())
}

pub fn read_tensors<R: Read>(input: &mut R) -> Result<Vec<(String, StoredTensor)>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    parse_tensors(&bytes)
}

pub fn parse_tensors(bytes: &[u8]) -> Result<Vec<(String, StoredTensor)>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(MAGIC.len())? != MAGIC {
        return Err(TensorError::Format("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(TensorError::Format(format!(
            "unsupported container version {version}"
        )));
    }
    let count = cur.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(fmt_err)?
            .to_owned();
        let code = cur.take(1)?[0];
        let dtype = DType::from_code(code)
            .ok_or_else(|| TensorError::Format(format!("unknown dtype code {code}")))?;
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(usize::try_from(cur.u64()?).map_err(fmt_err)?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| TensorError::Format("extent overflow".into()))?;
        let nbytes = numel
            .checked_mul(dtype.size_of())
            .ok_or_else(|| TensorError::Format("payload overflow".into()))?;
        let raw = cur.take(nbytes)?;
        let tensor = match dtype {
            DType::F32 => StoredTensor::F32(decode(&shape, raw)?),
            DType::F64 => StoredTensor::F64(decode(&shape, raw)?),
        };
        entries.push((name, tensor));
    }
    if cur.pos != bytes.len() {
        return Err(TensorError::Format("trailing bytes after last entry".into()));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::from_vec(&[2], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[("w", &t)]).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 1);
        // name length, name, dtype, rank, one extent, two f32 values
        assert_eq!(buf.len(), 16 + 4 + 1 + 1 + 4 + 8 + 8);
        assert_eq!(&buf[buf.len() - 4..], &(-2.5f32).to_le_bytes());
    }

    #[test]
    fn rejects_corruption() {
        let t = Tensor::<f64>::ones(&[3, 2]);
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[("a", &t)]).unwrap();
        assert!(parse_tensors(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(parse_tensors(&bad).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(parse_tensors(&extra).is_err());
    }
}
