//! Domain newtypes for pixel-space sequences.
//!
//! `VideoSeq` holds RGB frames `[T, H, W, 3]` with values in [0, 1].
//! `DepthSeq` holds scalar maps `[T, H, W]`; the same type carries both
//! normalized disparity (training labels, model output) and metric depth
//! (ground truth inside the generator and the eval harness), since only
//! shape and finiteness are structural.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::TensorF;

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSeq(TensorF);

impl VideoSeq {
    pub fn new(tensor: TensorF) -> Result<Self> {
        if tensor.rank() != 4 || tensor.shape()[3] != 3 {
            return Err(Error::Shape(format!(
                "video must be [T, H, W, 3], got {:?}",
                tensor.shape()
            )));
        }
        if !tensor.all_finite() {
            return Err(Error::Data("video contains non-finite values".into()));
        }
        let (lo, hi) = tensor.min_max();
        if lo < 0.0 || hi > 1.0 {
            return Err(Error::Data(format!(
                "video values outside [0, 1]: min {lo}, max {hi}"
            )));
        }
        Ok(VideoSeq(tensor))
    }

    pub fn tensor(&self) -> &TensorF {
        &self.0
    }

    pub fn into_tensor(self) -> TensorF {
        self.0
    }

    pub fn frames(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn slice_frames(&self, start: usize, end: usize) -> Result<VideoSeq> {
        Ok(VideoSeq(self.0.slice0(start, end)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthSeq(TensorF);

impl DepthSeq {
    pub fn new(tensor: TensorF) -> Result<Self> {
        if tensor.rank() != 3 {
            return Err(Error::Shape(format!(
                "depth must be [T, H, W], got {:?}",
                tensor.shape()
            )));
        }
        if !tensor.all_finite() {
            return Err(Error::Data("depth contains non-finite values".into()));
        }
        Ok(DepthSeq(tensor))
    }

    pub fn tensor(&self) -> &TensorF {
        &self.0
    }

    pub fn into_tensor(self) -> TensorF {
        self.0
    }

    pub fn frames(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn slice_frames(&self, start: usize, end: usize) -> Result<DepthSeq> {
        Ok(DepthSeq(self.0.slice0(start, end)?))
    }
}

/// Crop `(top, bottom, left, right)` pixels off every frame of a `[T, H, W]`
/// or `[T, H, W, C]` tensor.
pub fn crop_frames<S: crate::Scalar>(
    t: &Tensor<S>,
    top: usize,
    bottom: usize,
    left: usize,
    right: usize,
) -> Result<Tensor<S>> {
    let shape = t.shape().to_vec();
    if shape.len() != 3 && shape.len() != 4 {
        return Err(Error::Shape(format!(
            "crop expects [T, H, W] or [T, H, W, C], got {shape:?}"
        )));
    }
    let (frames, h, w) = (shape[0], shape[1], shape[2]);
    let chans = if shape.len() == 4 { shape[3] } else { 1 };
    if top + bottom >= h || left + right >= w {
        return Err(Error::Shape(format!(
            "crop ({top}, {bottom}, {left}, {right}) leaves no pixels of {h}x{w}"
        )));
    }
    let nh = h - top - bottom;
    let nw = w - left - right;
    let mut out_shape = shape.clone();
    out_shape[1] = nh;
    out_shape[2] = nw;
    let mut out = Tensor::zeros(&out_shape)?;
    let src = t.data();
    let dst = out.data_mut();
    for f in 0..frames {
        for y in 0..nh {
            let src_row = ((f * h + y + top) * w + left) * chans;
            let dst_row = ((f * nh + y) * nw) * chans;
            dst[dst_row..dst_row + nw * chans]
                .copy_from_slice(&src[src_row..src_row + nw * chans]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn video_range_is_enforced() {
        let ok = Tensor::from_vec(&[1, 2, 2, 3], vec![0.5; 12]).unwrap();
        assert!(VideoSeq::new(ok).is_ok());
        let bad = Tensor::from_vec(&[1, 2, 2, 3], vec![1.5; 12]).unwrap();
        assert!(VideoSeq::new(bad).is_err());
    }

    #[test]
    fn crop_arithmetic() {
        let t = Tensor::<f32>::zeros(&[2, 480, 640]).unwrap();
        let c = crop_frames(&t, 8, 8, 11, 11).unwrap();
        assert_eq!(c.shape(), &[2, 464, 618]);
    }

    #[test]
    fn crop_keeps_values() {
        let t =
            Tensor::<f32>::from_vec(&[1, 3, 3], (0..9).map(|i| i as f32).collect()).unwrap();
        let c = crop_frames(&t, 1, 0, 1, 1).unwrap();
        assert_eq!(c.shape(), &[1, 2, 1]);
        assert_eq!(c.data(), &[4.0, 7.0]);
    }
}
