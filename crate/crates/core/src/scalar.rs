//! Floating-point scalar abstraction: everything numeric is generic over
//! `Scalar` so the denoiser can run a 64-bit shadow pass for gradient
//! verification while the pipeline itself stays in `f32`.

use num_traits::Float;
use std::fmt::Debug;

pub trait Scalar: Float + Debug + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}
