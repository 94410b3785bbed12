//! Frequency-enhancement transformer segmentation toolkit.
//!
//! A small tensor engine with tape-based reverse-mode differentiation, a
//! one-level orthonormal Haar wavelet transform, standard and linear-time
//! attention, a frequency-enhancement transformer block with Gaussian-pyramid
//! boundary attention, a multi-scale skip bridge, and a U-shaped segmentation
//! model. Everything is verifiable at desk scale: reconstruction identities,
//! brute-force oracles, finite-difference gradient checks, and spectral
//! response measurements.

pub mod error;
pub mod kernels;
pub mod real;
pub mod rng;
pub mod tensor;

pub mod params;
pub mod tape;
mod backward;
pub mod gradcheck;
pub mod wavelet;
pub mod attention;
pub mod nn;
pub mod fet;
pub mod msce;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod model;
pub mod synth;
pub mod ckpt;
pub mod train;
pub mod analysis;

pub use error::{Error, Result};
pub use real::{Dtype, Precision, Real};
pub use tensor::Tensor;
