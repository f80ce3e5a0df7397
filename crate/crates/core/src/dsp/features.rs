//! `LSF1` feature files: magic, u32 frame count, u32 bin count, u8 kind,
//! then `frames × bins` little-endian f32, row-major.

use std::path::Path;

use super::{FeatureKind, FrameMatrix};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LSF1";
const HEADER_LEN: usize = 13;

pub fn encode_features(m: &FrameMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.n_frames as u32).to_le_bytes());
    out.extend_from_slice(&(m.n_bins as u32).to_le_bytes());
    out.push(m.kind.code());
    for v in &m.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<FrameMatrix> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "not an LSF1 feature file"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let f = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let kind = FeatureKind::from_code(bytes[12])
        .ok_or_else(|| Error::format(path, format!("unknown feature kind {}", bytes[12])))?;
    if f != kind.bins() {
        return Err(Error::format(path, format!("{kind} features need {} bins, header says {f}", kind.bins())));
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() != n * f * 4 {
        return Err(Error::format(path, format!("expected {} data bytes, found {}", n * f * 4, body.len())));
    }
    let values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    FrameMatrix::new(values, n, kind)
}

pub fn write_features(path: &Path, m: &FrameMatrix) -> Result<()> {
    std::fs::write(path, encode_features(m)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FrameMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}
