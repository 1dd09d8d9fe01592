use std::fmt::Debug;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Scalar types the kernels operate on.
pub trait Element: Float + Default + Debug + Send + Sync + 'static {
    /// Bytes per element, used by the tile-memory legality rule.
    const SIZE: usize;
    /// Relative tolerance when comparing a kernel result with the reference.
    const REL_TOL: f64;
}

impl Element for f32 {
    const SIZE: usize = 4;
    const REL_TOL: f64 = 1e-6;
}

impl Element for f64 {
    const SIZE: usize = 8;
    const REL_TOL: f64 = 1e-12;
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Element> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(size: usize) -> Self {
        let mut m = Self::zeros(size, size);
        for i in 0..size {
            m.data[i * size + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} elements cannot form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    /// Uniform values in `[-1, 1)` from a seeded generator.
    pub fn random(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let data = (0..rows * cols)
            .map(|_| T::from(rng.next_f64() * 2.0 - 1.0).unwrap())
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.cols + col] = value;
    }

    /// Largest element-wise difference relative to the largest magnitude in
    /// `reference` (zero when both are all-zero).
    pub fn max_rel_diff(&self, reference: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (reference.rows, reference.cols));
        let scale = reference
            .data
            .iter()
            .map(|v| v.to_f64().unwrap().abs())
            .fold(0.0, f64::max);
        let diff = self
            .data
            .iter()
            .zip(&reference.data)
            .map(|(a, b)| (a.to_f64().unwrap() - b.to_f64().unwrap()).abs())
            .fold(0.0, f64::max);
        if diff == 0.0 {
            0.0
        } else {
            diff / scale.max(f64::MIN_POSITIVE)
        }
    }

    pub fn approx_eq(&self, reference: &Self) -> bool {
        self.max_rel_diff(reference) <= T::REL_TOL
    }
}
