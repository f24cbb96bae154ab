//! Dense row-major tensors with the small op set the pipeline needs.
//!
//! Layout is always C order (last axis fastest). Reductions accumulate in
//! `f64` regardless of the element type so that `f32` pipelines keep 64-bit
//! accumulation inside means, norms, and dot products.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

fn checked_numel(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Shape("tensor rank must be at least 1".into()));
    }
    let mut n: usize = 1;
    for (axis, &d) in shape.iter().enumerate() {
        if d == 0 {
            return Err(Error::Shape(format!(
                "zero-sized axis {axis} in shape {shape:?}"
            )));
        }
        n = n
            .checked_mul(d)
            .ok_or_else(|| Error::Shape(format!("element count overflow for shape {shape:?}")))?;
    }
    Ok(n)
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: &[usize], fill: S) -> Result<Self> {
        let n = checked_numel(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![fill; n],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, S::zero())
    }

    pub fn zeros_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: vec![S::zero(); self.data.len()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let n = checked_numel(shape)?;
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} wants {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            debug_assert!(ix < dim, "index {ix} out of range on axis {i}");
            off = off * dim + ix;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> S {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: S) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, k: S) -> Self {
        self.map(|x| x * k)
    }

    /// Elementwise `(1 - t) * self + t * other`.
    pub fn lerp(&self, other: &Self, t: S) -> Result<Self> {
        let one = S::one();
        self.zip_map(other, |a, b| (one - t) * a + t * b)
    }

    /// Copy of frames `[start, end)` along axis 0.
    pub fn slice0(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.shape[0] {
            return Err(Error::Shape(format!(
                "slice [{start}, {end}) out of range for axis 0 of length {}",
                self.shape[0]
            )));
        }
        let stride: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Tensor {
            shape,
            data: self.data[start * stride..end * stride].to_vec(),
        })
    }

    /// Concatenation along axis 0; all trailing dims must agree.
    pub fn concat0(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat0 of zero tensors".into()))?;
        let tail = &first.shape[1..];
        let mut total = 0;
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(Error::Shape(format!(
                    "concat0 tail mismatch {:?} vs {:?}",
                    &p.shape[1..],
                    tail
                )));
            }
            total += p.shape[0];
        }
        let mut shape = first.shape.clone();
        shape[0] = total;
        let mut data = Vec::with_capacity(total * tail.iter().product::<usize>());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { shape, data })
    }

    /// Concatenation along the last axis; all leading dims must agree.
    pub fn concat_last(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat_last of zero tensors".into()))?;
        let rank = first.rank();
        let head = &first.shape[..rank - 1];
        let mut last_total = 0;
        for p in parts {
            if p.rank() != rank || &p.shape[..rank - 1] != head {
                return Err(Error::Shape(format!(
                    "concat_last head mismatch {:?} vs {:?}",
                    p.shape, first.shape
                )));
            }
            last_total += p.shape[rank - 1];
        }
        let rows: usize = head.iter().product();
        let mut shape = first.shape.clone();
        shape[rank - 1] = last_total;
        let mut data = Vec::with_capacity(rows * last_total);
        for r in 0..rows {
            for p in parts {
                let w = p.shape[rank - 1];
                data.extend_from_slice(&p.data[r * w..(r + 1) * w]);
            }
        }
        Ok(Tensor { shape, data })
    }

    pub fn mean_f64(&self) -> f64 {
        let sum: f64 = self.data.iter().map(|x| x.as_f64()).sum();
        sum / self.data.len() as f64
    }

    pub fn sum_sq_f64(&self) -> f64 {
        self.data
            .iter()
            .map(|x| {
                let v = x.as_f64();
                v * v
            })
            .sum()
    }

    pub fn dot_f64(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "dot shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum())
    }

    /// Mean squared difference, accumulated in f64.
    pub fn mse_f64(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "mse shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = a.as_f64() - b.as_f64();
                d * d
            })
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    pub fn rmse_f64(&self, other: &Self) -> Result<f64> {
        Ok(self.mse_f64(other)?.sqrt())
    }

    pub fn min_max(&self) -> (S, S) {
        let mut lo = self.data[0];
        let mut hi = self.data[0];
        for &x in &self.data {
            if x < lo {
                lo = x;
            }
            if x > hi {
                hi = x;
            }
        }
        (lo, hi)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| T::from_f64(x.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_shape() {
        assert!(Tensor::<f32>::new(&[2, 3], 0.5).is_ok());
        assert!(matches!(
            Tensor::<f32>::new(&[2, 0], 0.0),
            Err(Error::Shape(_))
        ));
        assert!(matches!(Tensor::<f32>::new(&[], 0.0), Err(Error::Shape(_))));
    }

    #[test]
    fn offset_is_row_major() {
        let t = Tensor::<f32>::from_vec(&[2, 3, 4], (0..24).map(|i| i as f32).collect()).unwrap();
        assert_eq!(t.get(&[0, 0, 0]), 0.0);
        assert_eq!(t.get(&[0, 0, 3]), 3.0);
        assert_eq!(t.get(&[0, 1, 0]), 4.0);
        assert_eq!(t.get(&[1, 0, 0]), 12.0);
        assert_eq!(t.get(&[1, 2, 3]), 23.0);
    }

    #[test]
    fn slice_and_concat_roundtrip() {
        let t = Tensor::<f32>::from_vec(&[4, 2], (0..8).map(|i| i as f32).collect()).unwrap();
        let a = t.slice0(0, 2).unwrap();
        let b = t.slice0(2, 4).unwrap();
        let back = Tensor::concat0(&[&a, &b]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn concat_last_interleaves_rows() {
        let a = Tensor::<f32>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2, 1], vec![9.0, 8.0]).unwrap();
        let c = Tensor::concat_last(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
    }

    #[test]
    fn reductions_accumulate_f64() {
        let t = Tensor::<f32>::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.mean_f64(), 2.0);
        assert_eq!(t.sum_sq_f64(), 14.0);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = Tensor::<f32>::zeros(&[2, 2]).unwrap();
        let b = Tensor::<f32>::zeros(&[2, 3]).unwrap();
        assert!(matches!(a.add(&b), Err(Error::Shape(_))));
    }
}
