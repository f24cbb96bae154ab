//! Block-DCT latent codec, the deterministic stand-in for a learned
//! video autoencoder.
//!
//! Each frame is cut into `block x block` tiles per channel, transformed by
//! the orthonormal 2-D DCT-II, and only the `keep` lowest-frequency
//! coefficients in zig-zag order survive. Decoding is the exact adjoint:
//! zero-fill the dropped coefficients and invert the transform. Frames are
//! processed independently, so encoding commutes with any frame slicing.
//!
//! Latent layout: `[T, H/b, W/b, C * keep]`, channel-major, i.e. coefficient
//! `q` of channel `c` lives at latent channel `c * keep + q`.
//!
//! Depth maps ride through the same path as video by replicating the single
//! channel to three on encode and averaging the three decoded channels.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::video::{DepthSeq, VideoSeq};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecConfig {
    pub block: usize,
    pub keep: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig { block: 8, keep: 16 }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block == 0 {
            return Err(Error::Domain("codec block size must be positive".into()));
        }
        if self.keep == 0 || self.keep > self.block * self.block {
            return Err(Error::Domain(format!(
                "keep must lie in [1, block^2] = [1, {}], got {}",
                self.block * self.block,
                self.keep
            )));
        }
        Ok(())
    }

    /// Latent channels for a given pixel channel count.
    pub fn latent_channels(&self, channels: usize) -> usize {
        channels * self.keep
    }
}

/// Diagonal zig-zag traversal of a `b x b` grid, lowest frequencies first.
pub fn zigzag_order(b: usize) -> Vec<(usize, usize)> {
    let mut order = Vec::with_capacity(b * b);
    for s in 0..(2 * b - 1) {
        let lo = s.saturating_sub(b - 1);
        let hi = s.min(b - 1);
        if s % 2 == 0 {
            // walk up: row decreasing
            for i in (lo..=hi).rev() {
                order.push((i, s - i));
            }
        } else {
            for i in lo..=hi {
                order.push((i, s - i));
            }
        }
    }
    order
}

/// Orthonormal DCT-II basis, `mat[u * b + i] = s_u cos(pi (2i+1) u / (2b))`.
fn dct_matrix(b: usize) -> Vec<f64> {
    let mut m = vec![0.0; b * b];
    let n = b as f64;
    for u in 0..b {
        let s = if u == 0 {
            (1.0 / n).sqrt()
        } else {
            (2.0 / n).sqrt()
        };
        for i in 0..b {
            m[u * b + i] = s * (std::f64::consts::PI * (2 * i + 1) as f64 * u as f64 / (2.0 * n)).cos();
        }
    }
    m
}

fn check_frame_dims(h: usize, w: usize, b: usize) -> Result<(usize, usize)> {
    if !h.is_multiple_of(b) || !w.is_multiple_of(b) {
        return Err(Error::Shape(format!(
            "frame size {h}x{w} not divisible by block {b}"
        )));
    }
    Ok((h / b, w / b))
}

/// Encode `[T, H, W, C]` into `[T, H/b, W/b, C * keep]`.
pub fn encode<S: Scalar>(frames: &Tensor<S>, cfg: &CodecConfig) -> Result<Tensor<S>> {
    cfg.validate()?;
    if frames.rank() != 4 {
        return Err(Error::Shape(format!(
            "encode expects [T, H, W, C], got {:?}",
            frames.shape()
        )));
    }
    let (t, h, w, c) = (
        frames.shape()[0],
        frames.shape()[1],
        frames.shape()[2],
        frames.shape()[3],
    );
    let b = cfg.block;
    let k = cfg.keep;
    let (bh, bw) = check_frame_dims(h, w, b)?;
    let basis = dct_matrix(b);
    let zig = zigzag_order(b);
    let mut out = Tensor::zeros(&[t, bh, bw, c * k])?;
    let in_frame = h * w * c;
    let out_frame = bh * bw * c * k;
    let src = frames.data();
    out.data_mut()
        .par_chunks_mut(out_frame)
        .enumerate()
        .for_each(|(f, dst)| {
            let frame = &src[f * in_frame..(f + 1) * in_frame];
            let mut block = vec![0.0f64; b * b];
            let mut tmp = vec![0.0f64; b * b];
            let mut coef = vec![0.0f64; b * b];
            for by in 0..bh {
                for bx in 0..bw {
                    for ch in 0..c {
                        for i in 0..b {
                            for j in 0..b {
                                let y = by * b + i;
                                let x = bx * b + j;
                                block[i * b + j] = frame[(y * w + x) * c + ch].as_f64();
                            }
                        }
                        // tmp = basis * block
                        for u in 0..b {
                            for j in 0..b {
                                let mut acc = 0.0;
                                for i in 0..b {
                                    acc += basis[u * b + i] * block[i * b + j];
                                }
                                tmp[u * b + j] = acc;
                            }
                        }
                        // coef = tmp * basis^T
                        for u in 0..b {
                            for v in 0..b {
                                let mut acc = 0.0;
                                for j in 0..b {
                                    acc += tmp[u * b + j] * basis[v * b + j];
                                }
                                coef[u * b + v] = acc;
                            }
                        }
                        let base = (by * bw + bx) * c * k + ch * k;
                        for (q, &(u, v)) in zig.iter().take(k).enumerate() {
                            dst[base + q] = S::from_f64(coef[u * b + v]);
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Decode `[T, H/b, W/b, C * keep]` back to `[T, H, W, C]`; the adjoint of
/// `encode` (zero-fill then inverse transform).
pub fn decode<S: Scalar>(latent: &Tensor<S>, cfg: &CodecConfig) -> Result<Tensor<S>> {
    cfg.validate()?;
    if latent.rank() != 4 {
        return Err(Error::Shape(format!(
            "decode expects [T, h, w, C*keep], got {:?}",
            latent.shape()
        )));
    }
    let (t, bh, bw, ck) = (
        latent.shape()[0],
        latent.shape()[1],
        latent.shape()[2],
        latent.shape()[3],
    );
    let k = cfg.keep;
    if ck % k != 0 {
        return Err(Error::Shape(format!(
            "latent channel count {ck} not divisible by keep {k}"
        )));
    }
    let c = ck / k;
    let b = cfg.block;
    let basis = dct_matrix(b);
    let zig = zigzag_order(b);
    let (h, w) = (bh * b, bw * b);
    let mut out = Tensor::zeros(&[t, h, w, c])?;
    let in_frame = bh * bw * ck;
    let out_frame = h * w * c;
    let src = latent.data();
    out.data_mut()
        .par_chunks_mut(out_frame)
        .enumerate()
        .for_each(|(f, dst)| {
            let frame = &src[f * in_frame..(f + 1) * in_frame];
            let mut coef = vec![0.0f64; b * b];
            let mut tmp = vec![0.0f64; b * b];
            for by in 0..bh {
                for bx in 0..bw {
                    for ch in 0..c {
                        coef.iter_mut().for_each(|v| *v = 0.0);
                        let base = (by * bw + bx) * ck + ch * k;
                        for (q, &(u, v)) in zig.iter().take(k).enumerate() {
                            coef[u * b + v] = frame[base + q].as_f64();
                        }
                        // tmp = basis^T * coef
                        for i in 0..b {
                            for v in 0..b {
                                let mut acc = 0.0;
                                for u in 0..b {
                                    acc += basis[u * b + i] * coef[u * b + v];
                                }
                                tmp[i * b + v] = acc;
                            }
                        }
                        // block = tmp * basis
                        for i in 0..b {
                            for j in 0..b {
                                let mut acc = 0.0;
                                for v in 0..b {
                                    acc += tmp[i * b + v] * basis[v * b + j];
                                }
                                let y = by * b + i;
                                let x = bx * b + j;
                                dst[(y * w + x) * c + ch] = S::from_f64(acc);
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

pub fn encode_video(video: &VideoSeq, cfg: &CodecConfig) -> Result<Tensor<f32>> {
    encode(video.tensor(), cfg)
}

/// Replicate the depth map to three channels and encode; the latent then has
/// the same shape as an encoded video.
pub fn encode_depth(depth: &DepthSeq, cfg: &CodecConfig) -> Result<Tensor<f32>> {
    let t = depth.tensor();
    let (frames, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let mut rep = Tensor::zeros(&[frames, h, w, 3])?;
    {
        let src = t.data();
        let dst = rep.data_mut();
        for (i, &v) in src.iter().enumerate() {
            dst[i * 3] = v;
            dst[i * 3 + 1] = v;
            dst[i * 3 + 2] = v;
        }
    }
    encode(&rep, cfg)
}

/// Decode a depth latent and average the three replicated channels.
pub fn decode_depth<S: Scalar>(latent: &Tensor<S>, cfg: &CodecConfig) -> Result<Tensor<S>> {
    let px = decode(latent, cfg)?;
    if px.shape()[3] != 3 {
        return Err(Error::Shape(format!(
            "depth latent decodes to {} channels, expected 3",
            px.shape()[3]
        )));
    }
    let (t, h, w) = (px.shape()[0], px.shape()[1], px.shape()[2]);
    let mut out = Tensor::zeros(&[t, h, w])?;
    let third = S::from_f64(1.0 / 3.0);
    {
        let src = px.data();
        let dst = out.data_mut();
        for (i, o) in dst.iter_mut().enumerate() {
            *o = (src[i * 3] + src[i * 3 + 1] + src[i * 3 + 2]) * third;
        }
    }
    Ok(out)
}
