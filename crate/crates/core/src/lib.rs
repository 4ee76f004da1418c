//! Scan-specific parallel MRI reconstruction with an untrained convolutional
//! prior.
//!
//! The library reconstructs an MR image from a single undersampled multi-coil
//! k-space acquisition by fitting the weights of a randomly initialized
//! encoder-decoder network to the measured data — no training sets, one
//! optimization per scan. It also ships the supporting cast: a centered
//! orthonormal FFT, the coil-wise acquisition operator and its adjoint,
//! ESPIRiT-style sensitivity calibration, a GRAPPA baseline, synthetic
//! phantom/coil/mask simulation, image quality metrics, and a small binary
//! array container for interchange.
//!
//! All numerical kernels are generic over the scalar type via [`Real`]
//! (`f32` or `f64`); the reconstruction pipeline and CLI compute in `f64`,
//! for which the `*64` aliases at the crate root are provided.

pub mod calibration;
pub mod conv;
pub mod error;
pub mod fft;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod mri;
pub mod optim;
pub mod rng;
pub mod runner;
pub mod scalar;
pub mod simulate;
pub mod tape;
pub mod tensor;
pub mod unet;

pub use error::{Error, Result};
pub use scalar::Real;

/// Concrete `f64` aliases; the full-precision pipeline works in these.
pub type Tensor64 = tensor::Tensor<f64>;
pub type ComplexImage64 = mri::ComplexImage<f64>;
pub type MultiCoilKSpace64 = mri::MultiCoilKSpace<f64>;
pub type CoilSensitivities64 = mri::CoilSensitivities<f64>;
pub type UNetConfig64 = unet::UNetConfig<f64>;
pub type NetworkParams64 = unet::NetworkParams<f64>;
pub type ReconConfig64 = runner::ReconConfig<f64>;
pub type ReconResult64 = runner::ReconResult<f64>;

/// Single-precision aliases, mainly useful for storage-bound callers.
pub type Tensor32 = tensor::Tensor<f32>;
pub type ComplexImage32 = mri::ComplexImage<f32>;
