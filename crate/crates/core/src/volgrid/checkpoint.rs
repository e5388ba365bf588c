//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "AIDN"            4 bytes magic
//! version           u32 (currently 1)
//! count             u32 number of arrays
//! repeated count times:
//!   name_len        u32, then name_len bytes of UTF-8
//!   rank            u32, then rank extents as u64
//!   data            product(extents) IEEE-754 f64 values
//! ```

use std::fs;
use std::io::Read;
use std::path::Path;

use super::params::ParamSet;
use crate::binio::{read_f64s, read_u32, read_u64, write_atomic};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AIDN";
pub const VERSION: u32 = 1;

pub fn encode(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.total_len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &e in &p.shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(mut bytes: &[u8]) -> Result<ParamSet> {
    let r = &mut bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("checkpoint truncated before magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("not an AIDN checkpoint".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(r)?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        if len > r.len() {
            return Err(Error::Format("checkpoint truncated in name".into()));
        }
        let (name, rest) = r.split_at(len);
        let name = std::str::from_utf8(name)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_owned();
        *r = rest;
        let rank = read_u32(r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(r).map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = read_f64s(r, n)?;
        params.push(name, &shape, data)?;
    }
    if !r.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes in checkpoint", r.len())));
    }
    Ok(params)
}

/// Writes through a temporary file and a rename, so a crash never leaves a
/// half-written checkpoint at `path`.
pub fn save(params: &ParamSet, path: &Path) -> Result<()> {
    write_atomic(path, &encode(params))
}

pub fn load(path: &Path) -> Result<ParamSet> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
