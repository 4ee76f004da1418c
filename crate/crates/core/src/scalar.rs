//! Scalar abstraction for the numerical kernels.

use std::fmt::Display;
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssignOps};

/// Floating-point scalar the library computes in: `f32` or `f64`.
///
/// `rustfft::FftNum` is part of the bound so FFT-backed operators can stay
/// generic.
pub trait Real:
    Float + FloatConst + FromPrimitive + NumAssignOps + Sum + Display + rustfft::FftNum
{
    /// Lossy conversion from `f64`, for literals and derived constants.
    fn cast(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Real")
    }
}

impl Real for f32 {}
impl Real for f64 {}
