use crate::error::{input, Result};
use crate::numerics::Matrix;

/// Entrywise keep/drop pattern for one weight matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PruneMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl PruneMask {
    pub fn none(rows: usize, cols: usize) -> Self {
        PruneMask { rows, cols, bits: vec![false; rows * cols] }
    }

    pub fn all(rows: usize, cols: usize) -> Self {
        PruneMask { rows, cols, bits: vec![true; rows * cols] }
    }

    pub fn from_bits(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return input(format!("{} bits for a {rows}×{cols} mask", bits.len()));
        }
        Ok(PruneMask { rows, cols, bits })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, keep: bool) {
        self.bits[i * self.cols + j] = keep;
    }

    pub fn kept(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// `M ⊙ W`.
    pub fn apply(&self, w: &Matrix) -> Result<Matrix> {
        if w.shape() != self.shape() {
            return input(format!("mask {:?} vs weight {:?}", self.shape(), w.shape()));
        }
        let mut out = w.clone();
        for (v, &b) in out.data_mut().iter_mut().zip(&self.bits) {
            if !b {
                *v = 0.0;
            }
        }
        Ok(out)
    }

    /// Whether `pruned` keeps or zeroes each entry of `source`.
    pub fn is_pruning_of(source: &Matrix, pruned: &Matrix) -> bool {
        source.shape() == pruned.shape()
            && source.data().iter().zip(pruned.data()).all(|(&s, &p)| p == s || p == 0.0)
    }
}
