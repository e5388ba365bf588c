//! Little-endian readers and atomic file writes shared by the binary formats.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

fn take<const N: usize>(r: &mut &[u8]) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("unexpected end of data".into()))?;
    Ok(buf)
}

pub(crate) fn read_u32(r: &mut &[u8]) -> Result<u32> {
    take::<4>(r).map(u32::from_le_bytes)
}

pub(crate) fn read_u64(r: &mut &[u8]) -> Result<u64> {
    take::<8>(r).map(u64::from_le_bytes)
}

pub(crate) fn read_f64(r: &mut &[u8]) -> Result<f64> {
    take::<8>(r).map(f64::from_le_bytes)
}

pub(crate) fn read_f64s(r: &mut &[u8], n: usize) -> Result<Vec<f64>> {
    if r.len() / 8 < n {
        return Err(Error::Format(format!("expected {n} values, found {} bytes", r.len())));
    }
    (0..n).map(|_| read_f64(r)).collect()
}

/// Write `bytes` to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}
