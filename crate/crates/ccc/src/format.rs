//! Tensor container shared by checkpoints and sample files.
//!
//! ```text
//! magic      4 bytes   "CCCK" (checkpoint) or "CCCS" (samples)
//! version    u32
//! header     u64 length + UTF-8 JSON
//! count      u32
//! tensor*    u32 name length, name, u8 dtype (0 = f32, 1 = f64),
//!            u32 rank, u64 extent × rank, little-endian payload
//! ```
//!
//! All integers are little-endian.

use std::path::Path;

use ccc_core::models::{Checkpoint, Descriptor, NamedTensor, TensorData, CHECKPOINT_VERSION};
use ccc_core::DType;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CCCK";
pub const SAMPLES_MAGIC: [u8; 4] = *b"CCCS";

/// Upper bound on a tensor rank accepted when reading.
const MAX_RANK: u32 = 8;

pub fn encode<H: Serialize>(magic: [u8; 4], version: u32, header: &H, tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let text = serde_json::to_string_pretty(header).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(&magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(match t.data.dtype() {
            DType::F32 => 0,
            DType::F64 => 1,
        });
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for e in &t.shape {
            out.extend_from_slice(&(*e as u64).to_le_bytes());
        }
        match &t.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::format(self.path, format!("truncated at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, value: u64) -> Result<usize> {
        usize::try_from(value).map_err(|_| Error::format(self.path, "length overflows"))
    }
}

pub fn decode<H: DeserializeOwned>(
    magic: [u8; 4],
    expected_version: u32,
    bytes: &[u8],
    path: &Path,
) -> Result<(H, Vec<NamedTensor>)> {
    let mut c = Cursor { bytes, pos: 0, path };
    let found = c.take(4)?;
    if found != magic {
        return Err(Error::format(
            path,
            format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(found), String::from_utf8_lossy(&magic)),
        ));
    }
    let version = c.u32()?;
    if version != expected_version {
        return Err(Error::VersionMismatch {
            expected: expected_version,
            found: version,
        });
    }
    let header_len = c.u64().and_then(|v| c.len(v))?;
    let text = std::str::from_utf8(c.take(header_len)?).map_err(|_| Error::format(path, "header is not UTF-8"))?;
    let header: H = serde_json::from_str(text).map_err(|e| Error::format(path, format!("header: {e}")))?;
    let count = c.u32()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
            .to_string();
        let dtype = c.take(1)?[0];
        let rank = c.u32()?;
        if rank > MAX_RANK {
            return Err(Error::format(path, format!("tensor `{name}` has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            let e = c.u64()?;
            shape.push(c.len(e)?);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .ok_or_else(|| Error::format(path, format!("tensor `{name}` is too large")))?;
        let data = match dtype {
            0 => TensorData::F32(
                c.take(len.checked_mul(4).ok_or_else(|| Error::format(path, "tensor too large"))?)?
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect(),
            ),
            1 => TensorData::F64(
                c.take(len.checked_mul(8).ok_or_else(|| Error::format(path, "tensor too large"))?)?
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                    .collect(),
            ),
            other => return Err(Error::format(path, format!("tensor `{name}` has unknown dtype tag {other}"))),
        };
        tensors.push(NamedTensor { name, shape, data });
    }
    if c.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after the last tensor"));
    }
    Ok((header, tensors))
}

pub fn encode_checkpoint(checkpoint: &Checkpoint) -> Result<Vec<u8>> {
    encode(CHECKPOINT_MAGIC, checkpoint.version, &checkpoint.descriptor, &checkpoint.tensors)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let (descriptor, tensors) = decode::<Descriptor>(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, bytes, path)?;
    Ok(Checkpoint {
        version: CHECKPOINT_VERSION,
        descriptor,
        tensors,
    })
}
