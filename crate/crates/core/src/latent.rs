//! Fixed affine standardization between codec latents and the diffusion
//! model's working space.
//!
//! The preconditioning wrappers around the denoiser assume the clean signal
//! has roughly zero mean and unit variance per channel: with that scaling
//! the skip weight `1/(1+sigma^2)` is already the optimal linear shrinkage
//! at every noise level, so the network only has to model what the
//! conditioning adds. Raw transform coefficients are far from that: the DC
//! coefficient of an 8x8 block averages `8 * mean(signal)` while high
//! frequencies sit two orders of magnitude lower. Training directly on raw
//! coefficients wastes model capacity on re-deriving per-channel shrinkage
//! and saturates the first layers with the large DC values of bright video.
//!
//! The constants below were measured once over the default procedural
//! corpus and then frozen, the same way learned-codec pipelines freeze a
//! latent scale factor. They do not need to be exact; being within a small
//! factor of the true scale is enough, so they are safe to keep fixed
//! across corpus regenerations.
//!
//! Standardization is applied after encoding and inverted before decoding.
//! It never touches the codec itself, which stays a pure orthonormal
//! transform.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::TensorF;

/// Per-coefficient standard deviations of depth latents, by zig-zag index.
const DEPTH_STD: [f32; 16] = [
    1.40, 0.63, 0.64, 0.32, 0.29, 0.32, 0.20, 0.16, 0.16, 0.20, 0.16, 0.11, 0.10, 0.10, 0.16,
    0.13,
];

/// Per-coefficient standard deviations of video latents, by zig-zag index.
/// Dominated by the blue plane, which carries the widest dynamic range.
const VIDEO_STD: [f32; 16] = [
    1.00, 0.45, 0.45, 0.24, 0.22, 0.24, 0.15, 0.12, 0.12, 0.15, 0.12, 0.08, 0.08, 0.08, 0.12,
    0.10,
];

/// Fallback spread for coefficients beyond the measured table.
const TAIL_STD: f32 = 0.10;

/// Mean DC coefficient of depth latents (higher frequencies are centered).
const DEPTH_DC_MEAN: f32 = 0.90;

/// Mean DC coefficient of video latents.
const VIDEO_DC_MEAN: f32 = 5.30;

fn table_std(table: &[f32; 16], j: usize) -> f32 {
    if j < table.len() {
        table[j]
    } else {
        TAIL_STD
    }
}

fn apply(z: &TensorF, dc_mean: f32, table: &[f32; 16], forward: bool) -> Result<TensorF> {
    let shape = z.shape();
    if shape.len() != 4 {
        return Err(Error::Shape(format!(
            "latent must be [T, Hb, Wb, C], got {shape:?}"
        )));
    }
    let lc = shape[3];
    if lc % 3 != 0 {
        return Err(Error::Shape(format!(
            "latent channels must be a multiple of 3, got {lc}"
        )));
    }
    let keep = lc / 3;
    let mut shift = vec![0f32; lc];
    let mut scale = vec![0f32; lc];
    for p in 0..3 {
        for j in 0..keep {
            let c = p * keep + j;
            shift[c] = if j == 0 { dc_mean } else { 0.0 };
            scale[c] = table_std(table, j);
        }
    }
    let mut out = Tensor::zeros(shape)?;
    {
        let od = out.data_mut();
        let zd = z.data();
        for (cell_out, cell_in) in od.chunks_mut(lc).zip(zd.chunks(lc)) {
            for c in 0..lc {
                cell_out[c] = if forward {
                    (cell_in[c] - shift[c]) / scale[c]
                } else {
                    cell_in[c] * scale[c] + shift[c]
                };
            }
        }
    }
    Ok(out)
}

/// Codec depth latent -> standardized diffusion variable.
pub fn standardize_depth(z: &TensorF) -> Result<TensorF> {
    apply(z, DEPTH_DC_MEAN, &DEPTH_STD, true)
}

/// Standardized diffusion variable -> codec depth latent.
pub fn destandardize_depth(z: &TensorF) -> Result<TensorF> {
    apply(z, DEPTH_DC_MEAN, &DEPTH_STD, false)
}

/// Codec video latent -> standardized conditioning input.
pub fn standardize_video(z: &TensorF) -> Result<TensorF> {
    apply(z, VIDEO_DC_MEAN, &VIDEO_STD, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;

    #[test]
    fn depth_roundtrip_is_close() {
        let mut rng = Rng::new(11);
        let z: TensorF = rng.randn(&[2, 3, 3, 48]).unwrap();
        let back = destandardize_depth(&standardize_depth(&z).unwrap()).unwrap();
        for (a, b) in z.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn standardization_is_deterministic() {
        let mut rng = Rng::new(12);
        let z: TensorF = rng.randn(&[1, 2, 2, 6]).unwrap();
        let a = standardize_video(&z).unwrap();
        let b = standardize_video(&z).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn dc_shift_applies_only_to_first_coefficient() {
        let z = Tensor::from_vec(&[1, 1, 1, 6], vec![0.0f32; 6]).unwrap();
        let s = standardize_depth(&z).unwrap();
        let d = s.data();
        // keep = 2 here: channels are [p0j0, p0j1, p1j0, p1j1, p2j0, p2j1]
        assert!(d[0] < 0.0 && d[2] < 0.0 && d[4] < 0.0);
        assert_eq!(d[1], 0.0);
        assert_eq!(d[3], 0.0);
        assert_eq!(d[5], 0.0);
    }

    #[test]
    fn rejects_channel_count_not_multiple_of_three() {
        let z = Tensor::from_vec(&[1, 1, 1, 4], vec![0.0f32; 4]).unwrap();
        assert!(standardize_depth(&z).is_err());
    }
}
