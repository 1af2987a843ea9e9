//! Checkpoint format: 16-byte header (magic "AADF0001", G and d_u as 32-bit
//! little-endian integers) followed by the flat parameter array as
//! little-endian IEEE-754 doubles.

use std::fs;
use std::path::Path;

use super::{DetectorConfig, DetectorParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"AADF0001";

pub fn write_checkpoint(params: &DetectorParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let flat = params.to_flat();
    let mut bytes = Vec::with_capacity(16 + flat.len() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(params.mask_grid as u32).to_le_bytes());
    bytes.extend_from_slice(&(params.d_u as u32).to_le_bytes());
    for v in flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<DetectorParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[0..8] != MAGIC {
        return Err(Error::Format(format!(
            "{}: not a detector checkpoint",
            path.display()
        )));
    }
    let mask_grid = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d_u = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let cfg = DetectorConfig { mask_grid, d_u };
    let body = &bytes[16..];
    if body.len() % 8 != 0 {
        return Err(Error::Format(format!(
            "{}: truncated parameter payload",
            path.display()
        )));
    }
    let flat: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DetectorParams::from_flat(&cfg, &flat)
}
