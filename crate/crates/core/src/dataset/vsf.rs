//! `.vsf` complex array files.
//!
//! Layout: magic `VSF1`, `u32` rank (1 or 2), `u32 dims[2]`, then
//! little-endian `f64` pairs `(re, im)` in row-major order. Rank-1 arrays
//! store `dims[1] = 1`.

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VSF1";
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct VsfArray {
    pub rank: u32,
    pub dims: [usize; 2],
    pub data: Vec<Complex64>,
}

impl VsfArray {
    pub fn vector(data: Vec<Complex64>) -> Self {
        Self { rank: 1, dims: [data.len(), 1], data }
    }

    /// `rows × cols` in row-major order.
    pub fn matrix(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::DimensionMismatch { expected: rows * cols, got: data.len() });
        }
        Ok(Self { rank: 2, dims: [rows, cols], data })
    }

    pub fn byte_len(&self) -> usize {
        HEADER_LEN + 16 * self.data.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.rank.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for c in &self.data {
            out.extend_from_slice(&c.re.to_le_bytes());
            out.extend_from_slice(&c.im.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!("file too short for header ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap());
        let rank = word(1);
        let dims = [word(2) as usize, word(3) as usize];
        if rank != 1 && rank != 2 {
            return Err(Error::Format(format!("unsupported rank {rank}")));
        }
        if rank == 1 && dims[1] != 1 {
            return Err(Error::Format("rank-1 array must have dims[1] = 1".into()));
        }
        let count = dims[0]
            .checked_mul(dims[1])
            .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
        let expected = HEADER_LEN + 16 * count;
        if bytes.len() != expected {
            return Err(Error::Format(format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect();
        Ok(Self { rank, dims, data })
    }
}

pub fn write_vsf(path: &Path, array: &VsfArray) -> Result<()> {
    fs::write(path, array.to_bytes())?;
    Ok(())
}

pub fn read_vsf(path: &Path) -> Result<VsfArray> {
    VsfArray::from_bytes(&fs::read(path)?)
}
