//! DNLW weight snapshots.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `b"DNLW"`               |
//! | 4      | 2    | version, `1`                  |
//! | 6      | 2    | dtype, `1` = f32, `2` = f64   |
//! | 8      | 4    | rows                          |
//! | 12     | 4    | cols                          |
//! | 16     | ..   | rows*cols values, row-major   |

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::linalg::{Matrix, Shape};

pub const MAGIC: &[u8; 4] = b"DNLW";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u16 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        match code {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("shape mismatch: {before_path} is {before}, {after_path} is {after}")]
    ShapeMismatch {
        before_path: PathBuf,
        before: Shape,
        after_path: PathBuf,
        after: Shape,
    },
}

pub fn encode(m: &Matrix, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.len() * dtype.width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&dtype.code().to_le_bytes());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.as_slice() {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

/// Parses a snapshot. `Err` carries a human-readable reason.
pub fn decode(bytes: &[u8]) -> Result<Matrix, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!(
            "truncated header: expected {HEADER_LEN} bytes, got {}",
            bytes.len()
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(format!("bad magic {:?}, expected \"DNLW\"", &bytes[0..4]));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = u16_at(4);
    if version != VERSION {
        return Err(format!("unsupported version {version}, expected {VERSION}"));
    }
    let dtype = Dtype::from_code(u16_at(6)).ok_or_else(|| format!("unknown dtype code {}", u16_at(6)))?;
    let rows = u32_at(8) as usize;
    let cols = u32_at(12) as usize;
    let expected = HEADER_LEN + rows * cols * dtype.width();
    if bytes.len() != expected {
        return Err(format!(
            "size mismatch for {rows}x{cols} {dtype:?}: expected {expected} bytes, got {}",
            bytes.len()
        ));
    }
    let body = &bytes[HEADER_LEN..];
    let data: Vec<f64> = match dtype {
        Dtype::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Matrix::from_vec(rows, cols, data).map_err(|e| e.to_string())
}

pub fn write_matrix(path: &Path, m: &Matrix, dtype: Dtype) -> Result<(), SnapshotError> {
    crate::io::write_atomic(path, &encode(m, dtype)).map_err(|source| SnapshotError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_matrix(path: &Path) -> Result<Matrix, SnapshotError> {
    let bytes = fs::read(path).map_err(|source| SnapshotError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes).map_err(|reason| SnapshotError::Format {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn load_snapshot_pair(before: &Path, after: &Path) -> Result<(Matrix, Matrix), SnapshotError> {
    let a = read_matrix(before)?;
    let b = read_matrix(after)?;
    if a.shape() != b.shape() {
        return Err(SnapshotError::ShapeMismatch {
            before_path: before.to_path_buf(),
            before: a.shape(),
            after_path: after.to_path_buf(),
            after: b.shape(),
        });
    }
    Ok((a, b))
}
