//! On-disk artifact formats: check-in files, hierarchy mapping files,
//! dataset snapshots, training checkpoints, and evaluation reports.
//!
//! Binary containers (`records.bin`, checkpoints) are versioned with
//! 4-byte magic strings and fixed little-endian layouts; everything
//! else is stable documented text or JSON.

pub mod checkins;
pub mod checkpoint;
pub mod mapping;
pub mod report;
pub mod snapshot;

use std::io::{Read, Write};
use std::path::Path;

use crate::error::CliError;

/// Wrap a std::io error with the path it happened on.
pub(crate) fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::io(path, e)
}

pub(crate) fn write_u32<W: Write>(w: &mut W, value: u32) -> std::io::Result<()> {
    w.write_all(&value.to_le_bytes())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, value: u64) -> std::io::Result<()> {
    w.write_all(&value.to_le_bytes())
}

pub(crate) fn write_i64<W: Write>(w: &mut W, value: i64) -> std::io::Result<()> {
    w.write_all(&value.to_le_bytes())
}

pub(crate) fn write_f64<W: Write>(w: &mut W, value: f64) -> std::io::Result<()> {
    w.write_all(&value.to_le_bytes())
}

pub(crate) fn write_str<W: Write>(w: &mut W, value: &str) -> std::io::Result<()> {
    write_u32(w, value.len() as u32)?;
    w.write_all(value.as_bytes())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn read_i64<R: Read>(r: &mut R) -> std::io::Result<i64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(i64::from_le_bytes(buf))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> std::io::Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
