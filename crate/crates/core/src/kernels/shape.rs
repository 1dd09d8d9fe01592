use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Description of one GEMM call: `C = alpha * op(A) * op(B) + beta * C`
/// with `op(A)` of size `m x k` and `op(B)` of size `k x n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemShape {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub trans_a: bool,
    #[serde(default)]
    pub trans_b: bool,
}

impl ProblemShape {
    /// Plain `C = A * B` shape (alpha 1, beta 0, no transposes).
    pub fn new(m: usize, n: usize, k: usize) -> Result<Self> {
        let shape = Self {
            m,
            n,
            k,
            alpha: 1.0,
            beta: 0.0,
            trans_a: false,
            trans_b: false,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn with_scalars(mut self, alpha: f64, beta: f64) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self
    }

    pub fn with_transposes(mut self, trans_a: bool, trans_b: bool) -> Self {
        self.trans_a = trans_a;
        self.trans_b = trans_b;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.k == 0 {
            return Err(Error::Shape(format!(
                "dimensions must be positive, got {}x{}x{}",
                self.m, self.n, self.k
            )));
        }
        Ok(())
    }

    /// The feature triple a selection model sees.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.m, self.n, self.k)
    }

    /// Stored (rows, cols) of A, accounting for the transpose flag.
    pub fn a_dims(&self) -> (usize, usize) {
        if self.trans_a {
            (self.k, self.m)
        } else {
            (self.m, self.k)
        }
    }

    pub fn b_dims(&self) -> (usize, usize) {
        if self.trans_b {
            (self.n, self.k)
        } else {
            (self.k, self.n)
        }
    }

    pub fn c_dims(&self) -> (usize, usize) {
        (self.m, self.n)
    }
}

impl fmt::Display for ProblemShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.m, self.n, self.k)
    }
}
