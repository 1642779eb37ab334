//! TNSR tensor files and LMSK label-mask files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TNSR" | "LMSK"
//! 4       1     version = 1
//! 5       1     rank (2 or 3; always 2 for LMSK)
//! 6       2     reserved, zero
//! 8       4·r   extents, u32 little-endian
//! ...           payload: f32 LE (TNSR) or u8 (LMSK), row-major
//! ```

use std::fs;
use std::path::Path;

use sprayeval_core::{LabelMask, Tensor};

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"TNSR";
pub const MASK_MAGIC: [u8; 4] = *b"LMSK";
pub const VERSION: u8 = 1;

const HEADER: usize = 8;
const MEMORY: &str = "<memory>";

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format { path: MEMORY.into(), msg: msg.into() }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt { path: MEMORY.into(), msg: msg.into() }
}

fn at_path(e: Error, path: &Path) -> Error {
    let path = path.display().to_string();
    match e {
        Error::Format { msg, .. } => Error::Format { path, msg },
        Error::Corrupt { msg, .. } => Error::Corrupt { path, msg },
        other => other,
    }
}

fn encode_header(magic: [u8; 4], extents: &[usize], payload_bytes: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 4 * extents.len() + payload_bytes);
    out.extend_from_slice(&magic);
    out.push(VERSION);
    out.push(extents.len() as u8);
    out.extend_from_slice(&[0, 0]);
    for &d in extents {
        let d = u32::try_from(d).expect("tensor extents fit in u32");
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

/// Parses the header and returns `(extents, payload)`.
fn decode_header<'a>(bytes: &'a [u8], magic: [u8; 4], ranks: &[u8]) -> Result<(Vec<usize>, &'a [u8])> {
    if bytes.len() < HEADER {
        return Err(format_err(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[..4] != magic {
        return Err(format_err(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(&magic)
        )));
    }
    if bytes[4] != VERSION {
        return Err(format_err(format!("unsupported version {}", bytes[4])));
    }
    let rank = bytes[5];
    if !ranks.contains(&rank) {
        return Err(format_err(format!("unsupported rank {rank}")));
    }
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(format_err("reserved bytes are not zero"));
    }
    let rank = usize::from(rank);
    let end = HEADER + 4 * rank;
    if bytes.len() < end {
        return Err(format_err("header truncated inside the extents"));
    }
    let extents: Vec<usize> = bytes[HEADER..end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    if extents.contains(&0) {
        return Err(corrupt(format!("zero extent in {extents:?}")));
    }
    Ok((extents, &bytes[end..]))
}

fn payload_len(extents: &[usize], elem: usize) -> Result<usize> {
    extents
        .iter()
        .try_fold(elem, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| corrupt(format!("extents {extents:?} overflow")))
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = encode_header(TENSOR_MAGIC, t.shape(), 4 * t.data().len());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let (shape, payload) = decode_header(bytes, TENSOR_MAGIC, &[2, 3])?;
    let want = payload_len(&shape, 4)?;
    if payload.len() != want {
        return Err(corrupt(format!(
            "shape {shape:?} needs {want} payload bytes, found {}",
            payload.len()
        )));
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Tensor::new(shape, data).map_err(|e| corrupt(e.to_string()))
}

pub fn encode_mask(m: &LabelMask) -> Vec<u8> {
    let mut out = encode_header(MASK_MAGIC, &[m.height(), m.width()], m.labels().len());
    out.extend_from_slice(m.labels());
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<LabelMask> {
    let (extents, payload) = decode_header(bytes, MASK_MAGIC, &[2])?;
    let want = payload_len(&extents, 1)?;
    if payload.len() != want {
        return Err(corrupt(format!(
            "{}x{} mask needs {want} labels, found {}",
            extents[0],
            extents[1],
            payload.len()
        )));
    }
    LabelMask::new(extents[0], extents[1], payload.to_vec()).map_err(|e| corrupt(e.to_string()))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes).map_err(|e| at_path(e, path))
}

pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(&bytes).map_err(|e| at_path(e, path))
}

pub fn write_mask(m: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_mask(m)).map_err(|e| Error::io(path, e))
}
