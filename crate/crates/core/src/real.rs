//! Scalar abstraction for the continuous kernels.
//!
//! The convex relaxation, LSE aggregation and CVaR smoothing are written
//! against [`Real`] so they run at `f32` or `f64`; the crate root pins the
//! concrete aliases used by the pipeline. Schedule arithmetic stays in
//! integer seconds and is not abstracted.

use num_traits::Float;

pub trait Real: Float + std::fmt::Debug + std::fmt::Display + std::iter::Sum + 'static {
    /// Converts an `f64` constant into the scalar type.
    fn c(x: f64) -> Self;

    /// Converts a `usize` (vector lengths, counts) into the scalar type.
    fn from_usize(n: usize) -> Self;

    /// Lossy view as `f64` for reporting.
    fn as_f64(self) -> f64;
}

macro_rules! impl_real {
    ($($t:ty),*) => {
        $(
            impl Real for $t {
                #[inline]
                fn c(x: f64) -> Self {
                    x as $t
                }
                #[inline]
                fn from_usize(n: usize) -> Self {
                    n as $t
                }
                #[inline]
                fn as_f64(self) -> f64 {
                    self as f64
                }
            }
        )*
    };
}

impl_real!(f32, f64);
