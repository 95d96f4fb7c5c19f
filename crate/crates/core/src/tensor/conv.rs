//! Multi-channel circular convolution.
//!
//! Convention (used by every layer in the crate): for a kernel of extent
//! `r` along an axis the anchor is `a = ⌊(r−1)/2⌋` and
//!
//! ```text
//! out[o][y][x] = Σ_i Σ_{k1,k2} w[o][i][k1][k2] · in[i][(y+k1−a1) mod H][(x+k2−a2) mod W]
//! ```
//!
//! i.e. circular correlation. With `m = 3`, `r = 2` and taps `[1, 2]` the
//! equivalent matrix has rows `[1,2,0]`, `[0,1,2]`, `[2,0,1]`; odd kernels are
//! centered.

use super::{ComplexTensor, Features, C64};
use crate::error::{ensure, Result};

/// Channel counts and spatial kernel extent of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub q_out: usize,
    pub q_in: usize,
    pub kernel: [usize; 2],
}

impl ConvShape {
    pub fn taps_per_filter(&self) -> usize {
        self.kernel[0] * self.kernel[1]
    }

    pub fn weight_len(&self) -> usize {
        self.q_out * self.q_in * self.taps_per_filter()
    }

    pub fn anchor(&self) -> [usize; 2] {
        [(self.kernel[0] - 1) / 2, (self.kernel[1] - 1) / 2]
    }

    #[inline]
    pub fn index(&self, o: usize, i: usize, k1: usize, k2: usize) -> usize {
        ((o * self.q_in + i) * self.kernel[0] + k1) * self.kernel[1] + k2
    }

    fn check(&self, input: &Features) -> Result<()> {
        ensure!(
            input.channels == self.q_in,
            Shape,
            "convolution expects {} input channels, got {}",
            self.q_in,
            input.channels
        );
        ensure!(
            self.kernel[0] <= input.height && self.kernel[1] <= input.width,
            Shape,
            "filter {:?} larger than signal {}x{}",
            self.kernel,
            input.height,
            input.width
        );
        Ok(())
    }
}

/// Filter taps indexed `[out][in][k1][k2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    pub shape: ConvShape,
    pub taps: Vec<f64>,
}

impl FilterBank {
    pub fn new(q_out: usize, q_in: usize, kernel: [usize; 2], taps: Vec<f64>) -> Result<Self> {
        ensure!(
            q_out > 0 && q_in > 0 && kernel[0] > 0 && kernel[1] > 0,
            Shape,
            "filter bank extents must be positive"
        );
        let shape = ConvShape { q_out, q_in, kernel };
        ensure!(
            taps.len() == shape.weight_len(),
            Shape,
            "expected {} taps, got {}",
            shape.weight_len(),
            taps.len()
        );
        ensure!(taps.iter().all(|t| t.is_finite()), NonFinite, "filter taps");
        Ok(Self { shape, taps })
    }

    pub fn zeros(q_out: usize, q_in: usize, kernel: [usize; 2]) -> Self {
        let shape = ConvShape { q_out, q_in, kernel };
        Self {
            taps: vec![0.0; shape.weight_len()],
            shape,
        }
    }

    /// Single-tap identity on `q` channels.
    pub fn identity(q: usize) -> Self {
        let mut bank = Self::zeros(q, q, [1, 1]);
        for c in 0..q {
            bank.taps[c * q + c] = 1.0;
        }
        bank
    }

    pub fn get(&self, o: usize, i: usize, k1: usize, k2: usize) -> f64 {
        self.taps[self.shape.index(o, i, k1, k2)]
    }

    pub fn set(&mut self, o: usize, i: usize, k1: usize, k2: usize, v: f64) {
        let idx = self.shape.index(o, i, k1, k2);
        self.taps[idx] = v;
    }

    pub fn apply(&self, input: &Features) -> Result<Features> {
        conv_forward(input, &self.shape, &self.taps, None)
    }
}

/// `dst[y][x] = src[(y+dy) mod h][(x+dx) mod w]`
fn shift_plane(src: &[f64], h: usize, w: usize, dy: isize, dx: isize, dst: &mut [f64]) {
    let sy = dy.rem_euclid(h as isize) as usize;
    let sx = dx.rem_euclid(w as isize) as usize;
    for y in 0..h {
        let row = &src[((y + sy) % h) * w..((y + sy) % h + 1) * w];
        let out = &mut dst[y * w..(y + 1) * w];
        out[..w - sx].copy_from_slice(&row[sx..]);
        out[w - sx..].copy_from_slice(&row[..sx]);
    }
}

/// `dst[(y+dy) mod h][(x+dx) mod w] += src[y][x]`
fn unshift_add(src: &[f64], h: usize, w: usize, dy: isize, dx: isize, dst: &mut [f64]) {
    let sy = dy.rem_euclid(h as isize) as usize;
    let sx = dx.rem_euclid(w as isize) as usize;
    for y in 0..h {
        let ty = (y + sy) % h;
        let row = &src[y * w..(y + 1) * w];
        let out = &mut dst[ty * w..(ty + 1) * w];
        for (o, s) in out[sx..].iter_mut().zip(&row[..w - sx]) {
            *o += s;
        }
        for (o, s) in out[..sx].iter_mut().zip(&row[w - sx..]) {
            *o += s;
        }
    }
}

#[inline]
fn axpy(dst: &mut [f64], alpha: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Circular multi-channel convolution of a real feature map.
pub fn conv_forward(input: &Features, shape: &ConvShape, taps: &[f64], bias: Option<&[f64]>) -> Result<Features> {
    shape.check(input)?;
    debug_assert_eq!(taps.len(), shape.weight_len());
    let (h, w) = (input.height, input.width);
    let n = h * w;
    let mut out = Features::zeros(shape.q_out, h, w);
    if let Some(b) = bias {
        for o in 0..shape.q_out {
            out.channel_mut(o).fill(b[o]);
        }
    }
    let [a1, a2] = shape.anchor();
    let mut buf = vec![0.0; n];
    for i in 0..shape.q_in {
        let src = input.channel(i);
        for k1 in 0..shape.kernel[0] {
            for k2 in 0..shape.kernel[1] {
                shift_plane(src, h, w, k1 as isize - a1 as isize, k2 as isize - a2 as isize, &mut buf);
                for o in 0..shape.q_out {
                    let wv = taps[shape.index(o, i, k1, k2)];
                    if wv != 0.0 {
                        axpy(&mut out.data[o * n..(o + 1) * n], wv, &buf);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of [`conv_forward`]; gradients are accumulated.
pub fn conv_backward(
    input: &Features,
    shape: &ConvShape,
    taps: &[f64],
    grad_out: &Features,
    grad_w: &mut [f64],
    grad_b: Option<&mut [f64]>,
    mut grad_in: Option<&mut Features>,
) -> Result<()> {
    shape.check(input)?;
    ensure!(
        grad_out.shape() == [shape.q_out, input.height, input.width],
        Shape,
        "convolution output gradient has shape {:?}",
        grad_out.shape()
    );
    let (h, w) = (input.height, input.width);
    let n = h * w;
    if let Some(gb) = grad_b {
        for o in 0..shape.q_out {
            gb[o] += grad_out.channel(o).iter().sum::<f64>();
        }
    }
    let [a1, a2] = shape.anchor();
    let mut buf = vec![0.0; n];
    let mut acc = vec![0.0; n];
    for i in 0..shape.q_in {
        let src = input.channel(i);
        for k1 in 0..shape.kernel[0] {
            for k2 in 0..shape.kernel[1] {
                let (dy, dx) = (k1 as isize - a1 as isize, k2 as isize - a2 as isize);
                shift_plane(src, h, w, dy, dx, &mut buf);
                for o in 0..shape.q_out {
                    grad_w[shape.index(o, i, k1, k2)] += dot(grad_out.channel(o), &buf);
                }
                if let Some(gi) = grad_in.as_deref_mut() {
                    acc.fill(0.0);
                    for o in 0..shape.q_out {
                        let wv = taps[shape.index(o, i, k1, k2)];
                        if wv != 0.0 {
                            axpy(&mut acc, wv, grad_out.channel(o));
                        }
                    }
                    unshift_add(&acc, h, w, dy, dx, gi.channel_mut(i));
                }
            }
        }
    }
    Ok(())
}

fn complex_as_features(z: &ComplexTensor) -> Result<(usize, usize, usize)> {
    match *z.shape() {
        [q, m] => Ok((q, m, 1)),
        [q, h, w] => Ok((q, h, w)),
        _ => Err(crate::Error::Shape(format!(
            "expected [channels, m] or [channels, h, w], got {:?}",
            z.shape()
        ))),
    }
}

/// Multi-channel circular convolution of a complex signal with a real bank.
///
/// Accepts `[q_in, m]` (1-D, filters must have `kernel[1] == 1`) or
/// `[q_in, h, w]`; the output keeps the input rank with `q_out` channels.
pub fn circ_conv_mc(z: &ComplexTensor, f: &FilterBank) -> Result<ComplexTensor> {
    let (q, h, w) = complex_as_features(z)?;
    let re = Features::new(q, h, w, z.data().iter().map(|v| v.re).collect())?;
    let im = Features::new(q, h, w, z.data().iter().map(|v| v.im).collect())?;
    let out_re = conv_forward(&re, &f.shape, &f.taps, None)?;
    let out_im = conv_forward(&im, &f.shape, &f.taps, None)?;
    let data: Vec<C64> = out_re
        .data
        .iter()
        .zip(&out_im.data)
        .map(|(&a, &b)| C64::new(a, b))
        .collect();
    let mut shape = z.shape().to_vec();
    shape[0] = f.shape.q_out;
    Ok(ComplexTensor::from_parts_unchecked(shape, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Seed;
    use rand::Rng;

    fn random_features(c: usize, h: usize, w: usize, seed: u64) -> Features {
        let mut rng = Seed(seed).rng();
        Features::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn paper_normals_for_two_tap_filter() {
        let bank = FilterBank::new(1, 1, [2, 1], vec![1.0, 2.0]).unwrap();
        // Rows of the equivalent matrix are the images of the unit vectors' duals.
        let mut rows = vec![vec![0.0; 3]; 3];
        for j in 0..3 {
            let mut e = Features::zeros(1, 3, 1);
            e.data[j] = 1.0;
            let out = bank.apply(&e).unwrap();
            for n in 0..3 {
                rows[n][j] = out.data[n];
            }
        }
        assert_eq!(rows, vec![vec![1.0, 2.0, 0.0], vec![0.0, 1.0, 2.0], vec![2.0, 0.0, 1.0]]);
    }

    #[test]
    fn two_tap_filter_on_ramp() {
        let z = ComplexTensor::from_real(vec![1, 3], &[1.0, 2.0, 3.0]).unwrap();
        let bank = FilterBank::new(1, 1, [2, 1], vec![1.0, 2.0]).unwrap();
        let out = circ_conv_mc(&z, &bank).unwrap();
        let re: Vec<f64> = out.data().iter().map(|v| v.re).collect();
        assert_eq!(re, vec![5.0, 8.0, 5.0]);
    }

    #[test]
    fn identity_filter_is_identity() {
        let x = random_features(3, 5, 4, 9);
        let out = FilterBank::identity(3).apply(&x).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn rejects_mismatches() {
        let x = random_features(2, 4, 4, 1);
        assert!(FilterBank::zeros(1, 3, [3, 3]).apply(&x).is_err());
        assert!(FilterBank::zeros(1, 2, [5, 1]).apply(&x).is_err());
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), g> = <x, conv_backward_input(g)> and the weight gradient matches
        // <conv_w(x), g> for each unit weight.
        let shape = ConvShape { q_out: 3, q_in: 2, kernel: [3, 2] };
        let mut rng = Seed(11).rng();
        let taps: Vec<f64> = (0..shape.weight_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = random_features(2, 5, 6, 12);
        let g = random_features(3, 5, 6, 13);
        let y = conv_forward(&x, &shape, &taps, None).unwrap();
        let mut gw = vec![0.0; taps.len()];
        let mut gi = x.zeros_like();
        conv_backward(&x, &shape, &taps, &g, &mut gw, None, Some(&mut gi)).unwrap();
        assert!((y.dot(&g) - x.dot(&gi)).abs() < 1e-12);
        let lin: f64 = taps.iter().zip(&gw).map(|(a, b)| a * b).sum();
        assert!((lin - y.dot(&g)).abs() < 1e-12);
    }

    /// Dense block matrix with entry `[(o, y, x), (i, y', x')]` built tap by tap.
    fn explicit_matrix(shape: &ConvShape, taps: &[f64], h: usize, w: usize) -> Vec<Vec<f64>> {
        let n = h * w;
        let [a1, a2] = shape.anchor();
        let mut m = vec![vec![0.0; shape.q_in * n]; shape.q_out * n];
        for o in 0..shape.q_out {
            for i in 0..shape.q_in {
                for y in 0..h {
                    for x in 0..w {
                        for k1 in 0..shape.kernel[0] {
                            for k2 in 0..shape.kernel[1] {
                                let sy = (y + k1 + h - a1) % h;
                                let sx = (x + k2 + w - a2) % w;
                                m[o * n + y * w + x][i * n + sy * w + sx] += taps[shape.index(o, i, k1, k2)];
                            }
                        }
                    }
                }
            }
        }
        m
    }

    proptest::proptest! {
        #[test]
        fn matches_explicit_block_matrix(
            q_in in 1usize..=3, q_out in 1usize..=3, r1 in 1usize..=3, r2 in 1usize..=3,
            h in 3usize..=8, w in 3usize..=8, seed in 0u64..1000,
        ) {
            let shape = ConvShape { q_out, q_in, kernel: [r1, r2] };
            let mut rng = Seed(seed).rng();
            let taps: Vec<f64> = (0..shape.weight_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = random_features(q_in, h, w, seed + 1);
            let y = conv_forward(&x, &shape, &taps, None).unwrap();
            let m = explicit_matrix(&shape, &taps, h, w);
            let expect: Vec<f64> = m.iter().map(|row| row.iter().zip(&x.data).map(|(a, b)| a * b).sum()).collect();
            let expect = Features::new(q_out, h, w, expect).unwrap();
            proptest::prop_assert!(y.relative_error(&expect) <= 1e-12);
        }
    }
}
