//! Codeword index grids and their binary form.

use crate::error::{Error, Result};

/// Row-major grid of codeword indices; raster order is top row first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndexGrid {
    rows: usize,
    cols: usize,
    indices: Vec<u16>,
}

impl IndexGrid {
    pub fn new(rows: usize, cols: usize, indices: Vec<u16>) -> Result<Self> {
        if rows == 0 || cols == 0 || rows * cols != indices.len() {
            return Err(Error::dim(format!(
                "{} indices do not fill a {rows} x {cols} grid",
                indices.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            indices,
        })
    }

    pub fn from_usize(rows: usize, cols: usize, indices: &[usize]) -> Result<Self> {
        let v = indices
            .iter()
            .map(|&i| u16::try_from(i).map_err(|_| Error::Index(format!("index {i} exceeds u16"))))
            .collect::<Result<_>>()?;
        Self::new(rows, cols, v)
    }

    pub fn filled(rows: usize, cols: usize, value: u16) -> Self {
        Self {
            rows,
            cols,
            indices: vec![value; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.indices[row * self.cols + col]
    }

    pub fn set(&mut self, pos: usize, value: u16) {
        self.indices[pos] = value;
    }

    /// Raster-order sequence.
    pub fn flatten(&self) -> &[u16] {
        &self.indices
    }

    pub fn unflatten(rows: usize, cols: usize, seq: &[u16]) -> Result<Self> {
        Self::new(rows, cols, seq.to_vec())
    }

    pub fn to_usize(&self) -> Vec<usize> {
        self.indices.iter().map(|&i| i as usize).collect()
    }

    /// Fails if any index is `>= k`.
    pub fn check_range(&self, k: usize) -> Result<()> {
        match self.indices.iter().position(|&i| i as usize >= k) {
            None => Ok(()),
            Some(p) => Err(Error::Corruption(format!(
                "index {} at position {p} is outside the codebook of size {k}",
                self.indices[p]
            ))),
        }
    }

    /// `rows: u32 LE`, `cols: u32 LE`, then `rows * cols` u16 LE indices.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 2 * self.len());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for &i in &self.indices {
            out.extend_from_slice(&i.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < 8 {
            return Err(Error::format(0, "index grid header truncated"));
        }
        let rows = u32::from_le_bytes(b[0..4].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(b[4..8].try_into().unwrap()) as usize;
        let need = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(2))
            .ok_or_else(|| Error::format(0, "index grid shape overflows"))?;
        if b.len() != 8 + need {
            return Err(Error::format(
                8,
                format!("expected {need} payload bytes, found {}", b.len() - 8),
            ));
        }
        let indices = b[8..]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        Self::new(rows, cols, indices)
    }
}
