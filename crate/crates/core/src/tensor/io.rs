//! `CHT1` binary tensor files.
//!
//! Layout: the ASCII magic `CHT1`, a little-endian `u32` rank, `rank`
//! little-endian `u64` axis lengths, then the row-major payload as
//! little-endian `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::DenseTensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CHT1";

pub fn encode(t: &DenseTensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + 8 * t.rank() + 8 * t.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<DenseTensor> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("wrong magic"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|_| bad("truncated rank"))?;
    let rank = u32::from_le_bytes(word) as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut long = [0u8; 8];
    for _ in 0..rank {
        r.read_exact(&mut long).map_err(|_| bad("truncated dims"))?;
        shape.push(u64::from_le_bytes(long) as usize);
    }
    let numel: usize = shape.iter().product();
    if r.len() != numel * 8 {
        return Err(bad(&format!(
            "payload has {} bytes, dims require {}",
            r.len(),
            numel * 8
        )));
    }
    let data = r
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    DenseTensor::new(shape, data).map_err(|e| bad(&e.to_string()))
}

pub fn write_tensor(path: &Path, t: &DenseTensor) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(t))?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<DenseTensor> {
    let bytes = fs::read(path)?;
    decode(&bytes, path)
}
