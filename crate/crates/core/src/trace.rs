use serde::{Deserialize, Serialize};

/// A scan-grid cell, `i` along x and `j` along y.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub i: usize,
    pub j: usize,
}

impl Cell {
    pub const fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }

    pub fn within(&self, n: usize) -> bool {
        self.i < n && self.j < n
    }

    /// Row-major index into an `n x n` grid, rows along y.
    pub fn index(&self, n: usize) -> usize {
        self.j * n + self.i
    }

    pub fn distance(&self, x: f64, y: f64) -> f64 {
        ((self.i as f64 - x).powi(2) + (self.j as f64 - y).powi(2)).sqrt()
    }
}

/// One acquisition: samples recorded during a single encryption.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub samples: Vec<f32>,
    pub plaintext: [u8; 16],
    pub key: [u8; 16],
    pub cell: Cell,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
