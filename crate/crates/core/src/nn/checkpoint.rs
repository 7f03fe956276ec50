//! Binary parameter container.
//!
//! Layout (little endian):
//! `WACKPT01`, u32 header length, JSON header, u32 parameter count, then per
//! parameter: u32 name length, name bytes, u32 ndim, u64 dims, f64 values.
//! Values are widened to f64 on write, so f32 and f64 stores both round-trip
//! bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::params::Params;

const MAGIC: &[u8; 8] = b"WACKPT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config_hash: String,
    pub model: String,
    pub seed: u64,
    pub phase: u32,
    pub epoch: usize,
    pub missing_frac: f64,
    /// Element type of the saved store (`f32` or `f64`).
    pub scalar: String,
    /// Free-form payload, e.g. the resolved config and the normalizer.
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn write_checkpoint<S: Scalar>(
    mut w: impl Write,
    header: &CheckpointHeader,
    params: &Params<S>,
) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    w.write_all(MAGIC)?;
    w.write_all(&len_u32(json.len())?.to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&len_u32(params.len())?.to_le_bytes())?;
    for (name, value) in params.iter() {
        w.write_all(&len_u32(name.len())?.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&len_u32(value.ndim())?.to_le_bytes())?;
        for &d in value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(value.len() * 8);
        for v in value.data() {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_checkpoint<S: Scalar>(mut r: impl Read) -> Result<(CheckpointHeader, Params<S>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let n = read_u32(&mut r)? as usize;
    let mut json = vec![0u8; n];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    if header.scalar != S::NAME {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} parameters, requested {}",
            header.scalar,
            S::NAME
        )));
    }

    let count = read_u32(&mut r)?;
    let mut params = Params::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            shape.push(usize::try_from(u64::from_le_bytes(b)).map_err(|_| {
                Error::Checkpoint(format!("dimension of `{name}` does not fit in usize"))
            })?);
        }
        let len: usize = shape.iter().product();
        let mut raw = vec![0u8; len * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| S::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        if params.id_of(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter `{name}`")));
        }
        params.add(name, Array::new(shape, data)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last parameter".into()));
    }
    Ok((header, params))
}

pub fn save<S: Scalar>(path: &Path, header: &CheckpointHeader, params: &Params<S>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, header, params)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load<S: Scalar>(path: &Path) -> Result<(CheckpointHeader, Params<S>)> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} exceeds u32")))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
