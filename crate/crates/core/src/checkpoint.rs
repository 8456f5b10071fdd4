//! Single-file weight archives: a named map of tensor snapshots plus a JSON
//! configuration echo, so a checkpoint is self-describing.
//!
//! Layout (all integers little-endian):
//!   magic "CDNA", version byte,
//!   config: u64 byte-length + UTF-8 JSON,
//!   entry count u32,
//!   entries: name (u32 length + UTF-8), tensor snapshot (u64 byte-length +
//!   the tensor wire format from `tensor::io`).

use crate::error::{Result, SnapshotError};
use crate::tensor::io::{read_tensor, write_tensor};
use crate::tensor::{Scalar, Tensor};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"CDNA";
pub const VERSION: u8 = 1;

#[derive(Debug)]
pub struct Checkpoint<T: Scalar> {
    pub config: serde_json::Value,
    pub state: Vec<(String, Tensor<T>)>,
}

pub fn write_checkpoint<T: Scalar, W: Write>(
    w: &mut W,
    config: &serde_json::Value,
    state: &[(String, Tensor<T>)],
) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION])?;
    let cfg = serde_json::to_vec(config)?;
    w.write_all(&(cfg.len() as u64).to_le_bytes())?;
    w.write_all(&cfg)?;
    w.write_all(&(state.len() as u32).to_le_bytes())?;
    for (name, tensor) in state {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        let mut blob = Vec::new();
        write_tensor(&mut blob, tensor)?;
        w.write_all(&(blob.len() as u64).to_le_bytes())?;
        w.write_all(&blob)?;
    }
    Ok(())
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], field: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|_| SnapshotError::HeaderTruncated(field).into())
}

pub fn read_checkpoint<T: Scalar, R: Read>(r: &mut R) -> Result<Checkpoint<T>> {
    let mut magic = [0u8; 4];
    read_exact_or(r, &mut magic, "archive magic")?;
    if magic != MAGIC {
        return Err(SnapshotError::BadMagic(magic).into());
    }
    let mut version = [0u8; 1];
    read_exact_or(r, &mut version, "archive version")?;
    if version[0] != VERSION {
        return Err(SnapshotError::UnsupportedVersion(version[0]).into());
    }
    let mut len8 = [0u8; 8];
    read_exact_or(r, &mut len8, "config length")?;
    let cfg_len = u64::from_le_bytes(len8) as usize;
    let mut cfg = vec![0u8; cfg_len];
    r.read_exact(&mut cfg).map_err(|_| SnapshotError::Truncated {
        expected: cfg_len,
        found: 0,
    })?;
    let config: serde_json::Value = serde_json::from_slice(&cfg)?;
    let mut len4 = [0u8; 4];
    read_exact_or(r, &mut len4, "entry count")?;
    let count = u32::from_le_bytes(len4) as usize;
    let mut state = Vec::with_capacity(count);
    for _ in 0..count {
        read_exact_or(r, &mut len4, "entry name length")?;
        let name_len = u32::from_le_bytes(len4) as usize;
        let mut name = vec![0u8; name_len];
        read_exact_or(r, &mut name, "entry name")?;
        let name = String::from_utf8(name)
            .map_err(|_| crate::error::Error::config("checkpoint entry name is not UTF-8"))?;
        read_exact_or(r, &mut len8, "entry blob length")?;
        let blob_len = u64::from_le_bytes(len8) as usize;
        let mut blob = vec![0u8; blob_len];
        r.read_exact(&mut blob).map_err(|_| SnapshotError::Truncated {
            expected: blob_len,
            found: 0,
        })?;
        let tensor = read_tensor(&mut blob.as_slice())?;
        state.push((name, tensor));
    }
    Ok(Checkpoint { config, state })
}

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    config: &serde_json::Value,
    state: &[(String, Tensor<T>)],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, config, state)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let mut r = BufReader::new(File::open(path)?);
    read_checkpoint(&mut r)
}
