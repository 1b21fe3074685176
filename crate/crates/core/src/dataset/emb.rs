//! `EMB1` embedding files.
//!
//! Layout: the 4 magic bytes `EMB1`, `rows: u32 LE`, `cols: u32 LE`, then
//! `rows·cols` little-endian IEEE-754 `f32` values in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 4] = b"EMB1";
const HEADER_LEN: usize = 12;

pub fn encode(m: &Matrix<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes an `EMB1` buffer; `name` is used in error messages.
pub fn decode(bytes: &[u8], name: &str) -> Result<Matrix<f32>> {
    let fail = |field: &'static str, detail: String| Error::Format {
        path: name.to_string(),
        field,
        detail,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(
            "header",
            format!("{} bytes, need at least {HEADER_LEN}", bytes.len()),
        ));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail("magic", format!("expected EMB1, found {:?}", &bytes[..4])));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| fail("shape", format!("{rows}x{cols} overflows")))?;
    if payload.len() < expected {
        return Err(fail(
            "payload",
            format!(
                "truncated: {rows}x{cols} needs {} floats, found {}",
                rows * cols,
                payload.len() / 4
            ),
        ));
    }
    if payload.len() > expected {
        return Err(fail(
            "payload",
            format!("{} trailing bytes after {rows}x{cols} floats", payload.len() - expected),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn write(path: &Path, m: &Matrix<f32>) -> Result<()> {
    fs::write(path, encode(m)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Matrix<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

/// Reads a file and checks its column count against the dataset header.
pub fn read_checked(path: &Path, expected_cols: usize) -> Result<Matrix<f32>> {
    let m = read(path)?;
    if m.cols() != expected_cols {
        return Err(Error::Format {
            path: path.display().to_string(),
            field: "cols",
            detail: format!("dataset declares {expected_cols}, file has {}", m.cols()),
        });
    }
    Ok(m)
}
