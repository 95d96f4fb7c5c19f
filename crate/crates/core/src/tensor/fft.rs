//! Radix-2 FFT with a Bluestein fallback for arbitrary lengths.

use std::f64::consts::PI;

use super::{ComplexTensor, C64};
use crate::error::{Error, Result};

/// Normalization applied by [`fft2_with_norm`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FftNorm {
    /// `1/√n` per axis in both directions.
    Unitary,
    /// No scaling on the forward transform, `1/n` on the inverse.
    Backward,
}

enum Plan {
    Radix2 { twiddles: Vec<C64> },
    Bluestein {
        chirp: Vec<C64>,
        kernel_spectrum: Vec<C64>,
        inner: Box<Plan>,
        inner_len: usize,
    },
}

/// Precomputed transform of a fixed length and direction.
struct Fft {
    len: usize,
    plan: Plan,
}

impl Fft {
    fn new(len: usize, inverse: bool) -> Self {
        let plan = if len.is_power_of_two() {
            Plan::Radix2 {
                twiddles: radix2_twiddles(len, inverse),
            }
        } else {
            let inner_len = (2 * len - 1).next_power_of_two();
            let sign = if inverse { 1.0 } else { -1.0 };
            // w_k = exp(sign·iπ k²/n); k² is reduced mod 2n to keep the angle small.
            let chirp: Vec<C64> = (0..len)
                .map(|k| {
                    let k2 = (k as u128 * k as u128 % (2 * len as u128)) as f64;
                    C64::from_polar(1.0, sign * PI * k2 / len as f64)
                })
                .collect();
            let mut kernel = vec![C64::new(0.0, 0.0); inner_len];
            kernel[0] = chirp[0].conj();
            for k in 1..len {
                kernel[k] = chirp[k].conj();
                kernel[inner_len - k] = chirp[k].conj();
            }
            let forward = Plan::Radix2 {
                twiddles: radix2_twiddles(inner_len, false),
            };
            radix2_in_place(&mut kernel, &forward);
            Plan::Bluestein {
                chirp,
                kernel_spectrum: kernel,
                inner: Box::new(forward),
                inner_len,
            }
        };
        Self { len, plan }
    }

    /// Unnormalized transform in place.
    fn process(&self, buf: &mut [C64], scratch: &mut Vec<C64>) {
        debug_assert_eq!(buf.len(), self.len);
        match &self.plan {
            Plan::Radix2 { .. } => radix2_in_place(buf, &self.plan),
            Plan::Bluestein {
                chirp,
                kernel_spectrum,
                inner,
                inner_len,
            } => {
                let m = *inner_len;
                scratch.clear();
                scratch.resize(m, C64::new(0.0, 0.0));
                for k in 0..self.len {
                    scratch[k] = buf[k] * chirp[k];
                }
                radix2_in_place(scratch, inner);
                for (s, k) in scratch.iter_mut().zip(kernel_spectrum) {
                    *s *= k;
                }
                // inverse of the inner transform via conjugation
                for s in scratch.iter_mut() {
                    *s = s.conj();
                }
                radix2_in_place(scratch, inner);
                let inv_m = 1.0 / m as f64;
                for k in 0..self.len {
                    buf[k] = scratch[k].conj() * inv_m * chirp[k];
                }
            }
        }
    }
}

fn radix2_twiddles(n: usize, inverse: bool) -> Vec<C64> {
    let sign = if inverse { 1.0 } else { -1.0 };
    (0..n / 2)
        .map(|k| C64::from_polar(1.0, sign * 2.0 * PI * k as f64 / n as f64))
        .collect()
}

fn radix2_in_place(buf: &mut [C64], plan: &Plan) {
    let Plan::Radix2 { twiddles } = plan else {
        unreachable!("radix-2 kernel called with a Bluestein plan")
    };
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        let step = n / size;
        for start in (0..n).step_by(size) {
            for k in 0..half {
                let t = buf[start + k + half] * twiddles[k * step];
                let u = buf[start + k];
                buf[start + k] = u + t;
                buf[start + k + half] = u - t;
            }
        }
        size *= 2;
    }
}

/// One-dimensional unnormalized DFT along `axis`; `scale` multiplies the result.
pub fn fft_axis(x: &ComplexTensor, axis: usize, inverse: bool, scale: f64) -> Result<ComplexTensor> {
    let rank = x.rank();
    if axis >= rank {
        return Err(Error::Axis { axis, rank });
    }
    let shape = x.shape().to_vec();
    let n = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let plan = Fft::new(n, inverse);
    let mut out = x.clone();
    let data = out.data_mut();
    let mut line = vec![C64::new(0.0, 0.0); n];
    let mut scratch = Vec::new();
    for o in 0..outer {
        for s in 0..stride {
            let base = o * n * stride + s;
            for k in 0..n {
                line[k] = data[base + k * stride];
            }
            plan.process(&mut line, &mut scratch);
            for k in 0..n {
                data[base + k * stride] = line[k] * scale;
            }
        }
    }
    Ok(out)
}

fn transform2(x: &ComplexTensor, axes: (usize, usize), inverse: bool, norm: FftNorm) -> Result<ComplexTensor> {
    let rank = x.rank();
    for axis in [axes.0, axes.1] {
        if axis >= rank {
            return Err(Error::Axis { axis, rank });
        }
    }
    if axes.0 == axes.1 {
        return Err(Error::InvalidArgument(format!("repeated FFT axis {}", axes.0)));
    }
    let scale = |n: usize| match (norm, inverse) {
        (FftNorm::Unitary, _) => 1.0 / (n as f64).sqrt(),
        (FftNorm::Backward, false) => 1.0,
        (FftNorm::Backward, true) => 1.0 / n as f64,
    };
    let first = fft_axis(x, axes.0, inverse, scale(x.shape()[axes.0]))?;
    fft_axis(&first, axes.1, inverse, scale(x.shape()[axes.1]))
}

/// Unitary 2-D DFT over the given pair of axes.
pub fn fft2(x: &ComplexTensor, axes: (usize, usize)) -> Result<ComplexTensor> {
    transform2(x, axes, false, FftNorm::Unitary)
}

/// Inverse of [`fft2`].
pub fn ifft2(x: &ComplexTensor, axes: (usize, usize)) -> Result<ComplexTensor> {
    transform2(x, axes, true, FftNorm::Unitary)
}

/// Forward 2-D DFT with an explicit normalization convention.
pub fn fft2_with_norm(x: &ComplexTensor, axes: (usize, usize), norm: FftNorm) -> Result<ComplexTensor> {
    transform2(x, axes, false, norm)
}
