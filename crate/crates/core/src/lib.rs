//! Core library for pipeline-emulation domain adaptation in JPEG
//! steganalysis: synthetic imagery and development pipelines, a grayscale
//! JPEG codec with a differentiable quantizer, residual fingerprints,
//! distribution-alignment metrics, the constrained-kernel emulator and its
//! training loop, cost-based embedding simulation, DCTR-style detectors and
//! the comparison baselines.

pub mod error;
pub mod linalg;

pub mod alignmetrics;
pub mod baselines;
pub mod emulator;
pub mod imagery;
pub mod jpegcodec;
pub mod residual;
pub mod steganalysis;
pub mod stego;

pub use error::{Error, Result};
