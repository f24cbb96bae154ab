//! Video-to-depth conditional diffusion, desk scale.
//!
//! The pipeline turns an RGB clip into a temporally consistent normalized
//! disparity sequence: a block-DCT codec maps frames to a compact latent
//! space, a small spatio-temporal network denoises latents under the EDM
//! diffusion parameterization, long clips are processed as overlapping
//! segments whose initial noise is anchored to the previous segment and whose
//! overlaps are blended with linearly decaying weights, and predictions are
//! scored with the affine-invariant depth protocol.
//!
//! Numeric core types are generic over [`scalar::Scalar`] so the whole
//! network can be instantiated at `f64` for finite-difference verification;
//! production code uses the `f32` aliases exported at the crate root.

#![forbid(unsafe_code)]

pub mod codec;
pub mod edm;
pub mod error;
pub mod eval;
pub mod infer;
pub mod io;
pub mod latent;
pub mod net;
pub mod oracle;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod video;

pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Default 32-bit tensor used by the production pipeline.
pub type TensorF = Tensor<f32>;
/// 64-bit tensor used by the gradient-check shadow mode.
pub type TensorD = Tensor<f64>;
