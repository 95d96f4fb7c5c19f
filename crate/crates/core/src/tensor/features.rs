use crate::error::{ensure, Result};

/// Real multi-channel feature map laid out `[channel][row][col]`.
///
/// One-dimensional signals use `width == 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Features {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == channels * height * width,
            Shape,
            "feature data length {} != {channels}x{height}x{width}",
            data.len()
        );
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// A vector in `ℝⁿ` viewed as `n` channels of a 1×1 map.
    pub fn from_vector(v: &[f64]) -> Self {
        Self {
            channels: v.len(),
            height: 1,
            width: 1,
            data: v.to_vec(),
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.channels, self.height, self.width)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * s).collect(),
            ..*self
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `‖self − reference‖ / ‖reference‖` (absolute when the reference is 0).
    pub fn relative_error(&self, reference: &Self) -> f64 {
        assert_eq!(self.shape(), reference.shape());
        let diff = self
            .data
            .iter()
            .zip(&reference.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let denom = reference.norm();
        if denom == 0.0 {
            diff
        } else {
            diff / denom
        }
    }

    /// Channel-wise concatenation (spatial extents must agree).
    pub fn concat(parts: &[&Features]) -> Result<Features> {
        ensure!(!parts.is_empty(), InvalidArgument, "nothing to concatenate");
        let (h, w) = (parts[0].height, parts[0].width);
        ensure!(
            parts.iter().all(|p| p.height == h && p.width == w),
            Shape,
            "concatenated maps differ in spatial extent"
        );
        let channels = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(channels * h * w);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Features {
            channels,
            height: h,
            width: w,
            data,
        })
    }

    /// Splits channels into consecutive groups of the given sizes.
    pub fn split(&self, sizes: &[usize]) -> Vec<Features> {
        assert_eq!(sizes.iter().sum::<usize>(), self.channels);
        let n = self.plane_len();
        let mut start = 0;
        sizes
            .iter()
            .map(|&c| {
                let f = Features {
                    channels: c,
                    height: self.height,
                    width: self.width,
                    data: self.data[start * n..(start + c) * n].to_vec(),
                };
                start += c;
                f
            })
            .collect()
    }
}
