//! Tensor snapshot format.
//!
//! Layout: magic `CDNT`, one version byte (currently 1), rank as u32
//! little-endian, each dimension as u32 little-endian, then the payload as
//! row-major 32-bit little-endian floats. Parsing is strict: wrong magic,
//! unknown version, and short payloads are distinct errors.

use super::{Scalar, Tensor};
use crate::error::{Result, SnapshotError};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"CDNT";
pub const VERSION: u8 = 1;

pub fn write_tensor<T: Scalar, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&(v.to_f64() as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<T: Scalar, R: Read>(r: &mut R) -> Result<Tensor<T>> {
    let mut magic = [0u8; 4];
    read_exact_or(r, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(SnapshotError::BadMagic(magic).into());
    }
    let mut version = [0u8; 1];
    read_exact_or(r, &mut version, "version")?;
    if version[0] != VERSION {
        return Err(SnapshotError::UnsupportedVersion(version[0]).into());
    }
    let mut buf4 = [0u8; 4];
    read_exact_or(r, &mut buf4, "rank")?;
    let rank = u32::from_le_bytes(buf4) as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        read_exact_or(r, &mut buf4, "dims")?;
        shape.push(u32::from_le_bytes(buf4) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut payload = vec![0u8; numel * 4];
    let mut found = 0;
    while found < payload.len() {
        match r.read(&mut payload[found..])? {
            0 => {
                return Err(SnapshotError::Truncated {
                    expected: payload.len(),
                    found,
                }
                .into())
            }
            n => found += n,
        }
    }
    let data: Vec<T> = payload
        .chunks_exact(4)
        .map(|c| T::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Ok(Tensor::from_vec(&shape, data)?)
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], field: &'static str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| SnapshotError::HeaderTruncated(field).into())
        .map(|_| ())
}

pub fn save_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor(&mut f, t)
}

pub fn load_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_tensor(&mut f)
}
