//! Numeric substrate: dense complex tensors, real feature maps, the unitary
//! FFT, multi-channel circular convolution, regularized least squares,
//! seeded randomness and the `CTNS` binary format.

mod conv;
mod features;
mod fft;
mod io;
mod lstsq;
mod seed;

pub use conv::{circ_conv_mc, conv_backward, conv_forward, ConvShape, FilterBank};
pub use features::Features;
pub use fft::{fft2, fft2_with_norm, fft_axis, ifft2, FftNorm};
pub use io::{read_ctns, read_ctns_file, write_ctns, write_ctns_file, CTNS_MAGIC, CTNS_VERSION};
pub use lstsq::{lstsq, lstsq_multi, lstsq_real};
pub use seed::Seed;

use crate::error::{ensure, Error, Result};

pub use num_complex::Complex64 as C64;

/// Dense row-major complex tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    data: Vec<C64>,
}

impl ComplexTensor {
    /// Builds a tensor, checking extents, length and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        ensure!(!shape.is_empty(), Shape, "rank must be at least 1");
        ensure!(shape.iter().all(|&e| e > 0), Shape, "zero extent in {shape:?}");
        let len: usize = shape.iter().product();
        ensure!(
            len == data.len(),
            Shape,
            "data length {} does not match extents {shape:?}",
            data.len()
        );
        if let Some(pos) = data.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite(format!("tensor entry {pos}")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        assert!(shape.iter().all(|&e| e > 0), "zero extent in {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![C64::new(0.0, 0.0); shape.iter().product()],
        }
    }

    pub fn from_real(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<C64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        strides
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(self.strides())
            .map(|(&i, s)| i * s)
            .sum()
    }

    pub fn get(&self, index: &[usize]) -> C64 {
        self.data[self.offset(index)]
    }

    /// Euclidean norm over all entries.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        let len: usize = shape.iter().product();
        ensure!(len == self.data.len(), Shape, "cannot reshape {:?} to {shape:?}", self.shape);
        Ok(Self { shape, data: self.data })
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// Slice `i` along the leading axis (e.g. one coil of a `[C, H, W]` stack).
    pub fn slab(&self, i: usize) -> &[C64] {
        let n = self.data.len() / self.shape[0];
        &self.data[i * n..(i + 1) * n]
    }

    pub fn slab_mut(&mut self, i: usize) -> &mut [C64] {
        let n = self.data.len() / self.shape[0];
        &mut self.data[i * n..(i + 1) * n]
    }

    /// `‖self − other‖ / ‖other‖`, with 0/0 treated as 0.
    pub fn relative_error(&self, reference: &Self) -> f64 {
        assert_eq!(self.shape, reference.shape);
        let diff: f64 = self
            .data
            .iter()
            .zip(&reference.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let denom = reference.norm();
        if denom == 0.0 {
            diff
        } else {
            diff / denom
        }
    }
}
