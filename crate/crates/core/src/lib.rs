//! Toolkit for building input-adaptive GEMM libraries.
//!
//! The off-line phase tunes two kernel families exhaustively over many
//! problem shapes ([`tuner`]), labels each shape with its fastest
//! configuration ([`dataset`]), fits a CART classifier over `(M, N, K)`
//! ([`model`]) and scores it against the tuned tables ([`eval`]). The
//! on-line phase dispatches each call through the trained tree or the
//! source emitted from it ([`codegen`]).

pub mod codegen;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod model;
pub mod rng;
pub mod tuner;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Lowercase hex SHA-256 of `bytes`, used for config hashes and tree
/// fingerprints.
pub fn content_hash(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    use std::fmt::Write;
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
