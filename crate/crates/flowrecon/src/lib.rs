//! 4D flow MRI reconstruction toolkit.
//!
//! Simulates undersampled phase-contrast acquisitions of a synthetic flow
//! phantom and reconstructs them with zero-filling, a FISTA solver with
//! locally-low-rank regularization, or an unrolled variational network
//! trained end-to-end with hand-written reverse-mode differentiation.

pub mod cs_llr;
pub mod dataset;
pub mod encoding;
pub mod fft;
pub mod flowvn;
pub mod metrics;
pub mod phantom;
pub mod sampling;
pub mod training;

pub mod cli;

#[cfg(test)]
pub(crate) mod testutil;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty mask: no sampled points")]
    EmptyMask,
    #[error("zero k-space: cannot normalize")]
    ZeroKspace,
    #[error("solver diverged: {0}")]
    Diverged(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Complex scalar used throughout; computation is f64, containers on disk are f32.
pub type C64 = num_complex::Complex64;
