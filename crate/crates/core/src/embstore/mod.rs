//! Embedding matrices, attribute tables and their on-disk formats.
//!
//! `EMB1` layout (little-endian):
//!
//! | bytes   | content                         |
//! |---------|---------------------------------|
//! | 0..4    | magic `EMB1`                    |
//! | 4..8    | `u32` number of rows            |
//! | 8..12   | `u32` number of columns         |
//! | 12..16  | reserved, must be zero          |
//! | 16..    | rows × columns `f32`, row-major |

mod attributes;
mod tensor;

use std::fs;
use std::io::Write;
use std::path::Path;

pub use attributes::{read_attributes, read_attributes_with_vocabulary, write_attributes, AttributeTable};
pub use tensor::{EmbeddingTensor, TensorLayout};

use crate::error::{data_err, Error, Result};

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";
pub const EMB1_HEADER_LEN: usize = 16;

/// Dense N×C matrix of frozen representations, row-major `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n_samples: usize,
    n_features: usize,
    data: Vec<f32>,
    pub source_tag: String,
}

impl EmbeddingMatrix {
    pub fn new(n_samples: usize, n_features: usize, data: Vec<f32>) -> Result<Self> {
        if n_samples == 0 || n_features == 0 {
            return Err(data_err!(
                "embedding matrix must be non-empty, got {n_samples}x{n_features}"
            ));
        }
        if data.len() != n_samples * n_features {
            return Err(data_err!(
                "buffer of {} values does not match {n_samples}x{n_features}",
                data.len()
            ));
        }
        check_finite(&data, n_features)?;
        Ok(Self {
            n_samples,
            n_features,
            data,
            source_tag: String::new(),
        })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let n_features = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * n_features);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n_features {
                return Err(data_err!(
                    "row {i} has {} values, expected {n_features}",
                    row.len()
                ));
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), n_features, data)
    }

    pub fn with_source_tag(mut self, tag: impl Into<String>) -> Self {
        self.source_tag = tag.into();
        self
    }

    #[inline]
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    #[inline]
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.n_features + j]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.n_features)
    }

    pub fn column(&self, j: usize) -> Vec<f32> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Column-major copy of the data (`out[j * n + i]`).
    pub fn transposed(&self) -> Vec<f32> {
        let (n, c) = (self.n_samples, self.n_features);
        let mut out = vec![0.0f32; n * c];
        for (i, row) in self.rows().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                out[j * n + i] = v;
            }
        }
        out
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.n_features);
        for &i in indices {
            if i >= self.n_samples {
                return Err(data_err!("row index {i} out of range ({})", self.n_samples));
            }
            data.extend_from_slice(self.row(i));
        }
        let mut out = Self::new(indices.len(), self.n_features, data)?;
        out.source_tag = self.source_tag.clone();
        Ok(out)
    }

    /// Applies `f` to every row in place, re-validating finiteness afterwards.
    pub fn map_rows(&self, mut f: impl FnMut(usize, &mut [f32])) -> Result<Self> {
        let mut data = self.data.clone();
        for (i, row) in data.chunks_exact_mut(self.n_features).enumerate() {
            f(i, row);
        }
        let mut out = Self::new(self.n_samples, self.n_features, data)?;
        out.source_tag = self.source_tag.clone();
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(EMB1_HEADER_LEN + self.data.len() * 4);
        buf.extend_from_slice(EMB1_MAGIC);
        buf.extend_from_slice(&(self.n_samples as u32).to_le_bytes());
        buf.extend_from_slice(&(self.n_features as u32).to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < EMB1_HEADER_LEN {
            return Err(Error::Format(format!(
                "file is {} bytes, shorter than the {EMB1_HEADER_LEN}-byte EMB1 header",
                bytes.len()
            )));
        }
        if &bytes[0..4] != EMB1_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"EMB1\"",
                String::from_utf8_lossy(&bytes[0..4])
            )));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let (n, c, reserved) = (word(4) as usize, word(8) as usize, word(12));
        if reserved != 0 {
            return Err(Error::Format(format!(
                "reserved header word is {reserved:#x}, expected 0"
            )));
        }
        if n == 0 || c == 0 {
            return Err(Error::Format(format!("header declares empty matrix {n}x{c}")));
        }
        let expected = n
            .checked_mul(c)
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("header dims {n}x{c} overflow")))?;
        let payload = &bytes[EMB1_HEADER_LEN..];
        if payload.len() != expected {
            let what = if payload.len() < expected { "truncated" } else { "oversized" };
            return Err(Error::Format(format!(
                "{what} payload: header declares {n}x{c} ({expected} bytes), found {} bytes",
                payload.len()
            )));
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(n, c, data)
    }
}

fn check_finite(data: &[f32], n_features: usize) -> Result<()> {
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(data_err!(
            "non-finite value {} at row {}, column {}",
            data[pos],
            pos / n_features,
            pos % n_features
        ));
    }
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(EmbeddingMatrix::from_bytes(&bytes)?.with_source_tag(tag))
}

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    // Matrices built through `new` are finite, but the fields are reachable
    // from inside the crate, so check again before anything hits disk.
    check_finite(&matrix.data, matrix.n_features)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&matrix.to_bytes())
        .and_then(|_| file.flush())
        .map_err(|e| Error::io(path, e))
}
