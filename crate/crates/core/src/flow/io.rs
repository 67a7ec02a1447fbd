//! RSFL binary flow files: magic `RSFL`, little-endian `u32` height and
//! width, then `height * width` pairs of `f32` (dx, dy) in row-major order.

use std::path::Path;

use super::FlowField;
use crate::error::{Error, Result};

pub const FLOW_MAGIC: &[u8; 4] = b"RSFL";
const HEADER_LEN: usize = 12;

pub fn encode_flow(flow: &FlowField) -> Vec<u8> {
    let n = flow.width() * flow.height();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * n);
    out.extend_from_slice(FLOW_MAGIC);
    out.extend_from_slice(&(flow.height() as u32).to_le_bytes());
    out.extend_from_slice(&(flow.width() as u32).to_le_bytes());
    for (dx, dy) in flow.dx().iter().zip(flow.dy()) {
        out.extend_from_slice(&dx.to_le_bytes());
        out.extend_from_slice(&dy.to_le_bytes());
    }
    out
}

/// Decodes an RSFL buffer. Truncated or oversized payloads and non-finite
/// values are rejected.
pub fn decode_flow(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::FlowDecode(format!(
            "{} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..4] != FLOW_MAGIC {
        return Err(Error::FlowDecode(format!("bad magic {:?}", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (h, w) = (word(4), word(8));
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::FlowDecode(format!("dimensions {h}x{w} overflow")))?;
    if bytes.len() != expected {
        return Err(Error::FlowDecode(format!(
            "{h}x{w} flow needs {expected} bytes, got {}",
            bytes.len()
        )));
    }
    let n = h * w;
    let mut dx = Vec::with_capacity(n);
    let mut dy = Vec::with_capacity(n);
    for pair in bytes[HEADER_LEN..].chunks_exact(8) {
        dx.push(f32::from_le_bytes(pair[..4].try_into().expect("4 bytes")));
        dy.push(f32::from_le_bytes(pair[4..].try_into().expect("4 bytes")));
    }
    FlowField::from_components(w, h, dx, dy).map_err(|e| match e {
        Error::InvalidParameter(m) => Error::FlowDecode(m),
        other => other,
    })
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flow(&bytes).map_err(|e| match e {
        Error::FlowDecode(m) => Error::FlowDecode(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_flow(flow: &FlowField, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, encode_flow(flow)).map_err(|e| Error::io(path, e))
}
