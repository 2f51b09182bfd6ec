//! Dense row-major `f32` matrices and the `.emb` binary container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes  | content                          |
//! | ------ | -------------------------------- |
//! | 0..5   | magic `MEVT1`                    |
//! | 5..9   | `dim` as `u32`                   |
//! | 9..17  | `rows` as `u64`                  |
//! | 17..   | `rows * dim` IEEE-754 `f32`, row-major |

use std::fs;
use std::path::Path;

use crate::error::{Error, FormatErrorKind, Result};
use crate::io::write_atomic;

pub const MAGIC: &[u8; 5] = b"MEVT1";
pub const HEADER_LEN: usize = 17;

/// Row-major matrix of finite `f32` values.
///
/// Construction checks that the buffer length matches the shape and that
/// every value is finite. A zero-row matrix can be built in memory but is
/// refused by [`EmbeddingMatrix::to_bytes`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        let expected = rows
            .checked_mul(dim)
            .ok_or_else(|| Error::invalid("rows x dim overflows"))?;
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "data length {} does not match {rows} x {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at row {}, column {}",
                pos / dim.max(1),
                pos % dim.max(1)
            )));
        }
        Ok(Self { rows, dim, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::invalid(format!(
                    "row {i} has length {}, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact panics on a zero chunk size
        self.data.chunks_exact(self.dim.max(1)).take(self.rows)
    }

    /// Selects rows by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::invalid(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self {
            rows: indices.len(),
            dim: self.dim,
            data,
        })
    }

    /// Rows as `f64`, the precision used for all downstream arithmetic.
    pub fn to_f64_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows()
            .map(|r| r.iter().map(|&v| f64::from(v)).collect())
            .collect()
    }

    /// Returns a copy with every row scaled to unit L2 norm.
    pub fn normalize(&self) -> Result<Self> {
        let mut data = self.data.clone();
        for (i, row) in data.chunks_exact_mut(self.dim.max(1)).enumerate() {
            let norm = row
                .iter()
                .map(|&v| f64::from(v) * f64::from(v))
                .sum::<f64>()
                .sqrt();
            if norm == 0.0 {
                return Err(Error::invalid(format!("row {i} has zero norm")));
            }
            for v in row.iter_mut() {
                *v = (f64::from(*v) / norm) as f32;
            }
        }
        Ok(Self {
            rows: self.rows,
            dim: self.dim,
            data,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.dim == 0 {
            return Err(Error::invalid("refusing to encode a matrix with dim = 0"));
        }
        if self.rows == 0 {
            return Err(Error::invalid("refusing to encode a matrix with rows = 0"));
        }
        let dim = u32::try_from(self.dim)
            .map_err(|_| Error::invalid("dim does not fit in 32 bits"))?;
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&dim.to_le_bytes());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    /// Decodes an `.emb` buffer. Errors carry the byte offset where decoding
    /// stopped.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |offset: usize, kind| Error::Format {
            offset: offset as u64,
            kind,
        };
        if bytes.len() < MAGIC.len() {
            return Err(if MAGIC.starts_with(bytes) {
                fail(bytes.len(), FormatErrorKind::TruncatedHeader {
                    actual: bytes.len() as u64,
                })
            } else {
                fail(0, FormatErrorKind::BadMagic)
            });
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(fail(0, FormatErrorKind::BadMagic));
        }
        if bytes.len() < HEADER_LEN {
            return Err(fail(bytes.len(), FormatErrorKind::TruncatedHeader {
                actual: bytes.len() as u64,
            }));
        }
        let dim = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as u64;
        let rows = u64::from_le_bytes(bytes[9..17].try_into().expect("8 bytes"));
        if dim == 0 {
            return Err(fail(5, FormatErrorKind::ZeroDim));
        }
        if rows == 0 {
            return Err(fail(9, FormatErrorKind::ZeroRows));
        }
        let expected = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| fail(9, FormatErrorKind::Overflow))?;
        let actual = (bytes.len() - HEADER_LEN) as u64;
        if actual < expected {
            return Err(fail(bytes.len(), FormatErrorKind::TruncatedPayload {
                expected,
                actual,
            }));
        }
        if actual > expected {
            return Err(fail(
                HEADER_LEN + expected as usize,
                FormatErrorKind::TrailingBytes {
                    extra: actual - expected,
                },
            ));
        }
        let mut data = Vec::with_capacity((rows * dim) as usize);
        for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(fail(HEADER_LEN + 4 * i, FormatErrorKind::NonFinite));
            }
            data.push(v);
        }
        Ok(Self {
            rows: rows as usize,
            dim: dim as usize,
            data,
        })
    }
}

/// Reads an `.emb` file.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::from_bytes(&bytes)
}

/// Writes an `.emb` file atomically. Nothing is written if the matrix is
/// not encodable.
pub fn save_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let bytes = matrix.to_bytes()?;
    write_atomic(path.as_ref(), &bytes)
}
