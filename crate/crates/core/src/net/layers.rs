//! Parameter-free spatial operators and their adjoints.

use crate::tensor::Features;

pub(crate) fn avg_pool(x: &Features, f: [usize; 2]) -> Features {
    let (h, w) = (x.height / f[0], x.width / f[1]);
    let mut out = Features::zeros(x.channels, h, w);
    let s = 1.0 / (f[0] * f[1]) as f64;
    for c in 0..x.channels {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..x.height {
            for xx in 0..x.width {
                dst[(y / f[0]) * w + xx / f[1]] += src[y * x.width + xx] * s;
            }
        }
    }
    out
}

pub(crate) fn avg_pool_adjoint(g: &Features, f: [usize; 2]) -> Features {
    let (h, w) = (g.height * f[0], g.width * f[1]);
    let mut out = Features::zeros(g.channels, h, w);
    let s = 1.0 / (f[0] * f[1]) as f64;
    for c in 0..g.channels {
        let src = g.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / f[0]) * g.width + x / f[1]] * s;
            }
        }
    }
    out
}

/// Places `x[y][x]` at `(f₁y, f₂x)` and zeros elsewhere.
pub(crate) fn zero_insert(x: &Features, f: [usize; 2]) -> Features {
    let (h, w) = (x.height * f[0], x.width * f[1]);
    let mut out = Features::zeros(x.channels, h, w);
    for c in 0..x.channels {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..x.height {
            for xx in 0..x.width {
                dst[(y * f[0]) * w + xx * f[1]] = src[y * x.width + xx];
            }
        }
    }
    out
}

pub(crate) fn zero_insert_adjoint(g: &Features, f: [usize; 2]) -> Features {
    let (h, w) = (g.height / f[0], g.width / f[1]);
    let mut out = Features::zeros(g.channels, h, w);
    for c in 0..g.channels {
        let src = g.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y * f[0]) * g.width + x * f[1]];
            }
        }
    }
    out
}

/// Orthonormal Haar matrix of a `f₁×f₂` block (Kronecker product of 2-point
/// transforms); symmetric and self-inverse.
pub(crate) fn haar_matrix(f: [usize; 2]) -> Vec<Vec<f64>> {
    let h1 = |n: usize| -> Vec<Vec<f64>> {
        if n == 1 {
            vec![vec![1.0]]
        } else {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            vec![vec![s, s], vec![s, -s]]
        }
    };
    let (a, b) = (h1(f[0]), h1(f[1]));
    let n = f[0] * f[1];
    let mut m = vec![vec![0.0; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i / f[1]][j / f[1]] * b[i % f[1]][j % f[1]];
        }
    }
    m
}

/// `out[b·C + c][y][x] = gain · Σ_j H[b][j] · x[c][f₁y + j/f₂][f₂x + j%f₂]`
pub(crate) fn haar_pool(x: &Features, f: [usize; 2], gain: f64) -> Features {
    let m = haar_matrix(f);
    let bands = f[0] * f[1];
    let (h, w) = (x.height / f[0], x.width / f[1]);
    let c_in = x.channels;
    let mut out = Features::zeros(c_in * bands, h, w);
    for c in 0..c_in {
        let src = x.channel(c);
        for y in 0..h {
            for xx in 0..w {
                for (b, row) in m.iter().enumerate() {
                    let mut acc = 0.0;
                    for (j, &hv) in row.iter().enumerate() {
                        acc += hv * src[(f[0] * y + j / f[1]) * x.width + f[1] * xx + j % f[1]];
                    }
                    out.data[((b * c_in + c) * h + y) * w + xx] = gain * acc;
                }
            }
        }
    }
    out
}

/// Adjoint (and, for unit gain, inverse) of [`haar_pool`].
pub(crate) fn haar_unpool(x: &Features, f: [usize; 2], gain: f64) -> Features {
    let m = haar_matrix(f);
    let bands = f[0] * f[1];
    let c_out = x.channels / bands;
    let (h, w) = (x.height * f[0], x.width * f[1]);
    let mut out = Features::zeros(c_out, h, w);
    for c in 0..c_out {
        for y in 0..x.height {
            for xx in 0..x.width {
                for j in 0..bands {
                    let mut acc = 0.0;
                    for (b, row) in m.iter().enumerate() {
                        acc += row[j] * x.data[((b * c_out + c) * x.height + y) * x.width + xx];
                    }
                    out.data[(c * h + f[0] * y + j / f[1]) * w + f[1] * xx + j % f[1]] = gain * acc;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Seed;
    use rand::Rng;

    fn random(c: usize, h: usize, w: usize, seed: u64) -> Features {
        let mut rng = Seed(seed).rng();
        Features::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn adjoint_pairs() {
        let x = random(2, 4, 6, 1);
        for f in [[2, 2], [2, 1], [1, 3]] {
            let y = random(2, 4 / f[0], 6 / f[1], 2);
            assert!((avg_pool(&x, f).dot(&y) - x.dot(&avg_pool_adjoint(&y, f))).abs() < 1e-12);
            assert!((zero_insert(&y, f).dot(&x) - y.dot(&zero_insert_adjoint(&x, f))).abs() < 1e-12);
        }
        for f in [[2, 2], [2, 1], [1, 2]] {
            let b = f[0] * f[1];
            let y = random(2 * b, 4 / f[0], 6 / f[1], 3);
            assert!((haar_pool(&x, f, 1.5).dot(&y) - x.dot(&haar_unpool(&y, f, 1.5))).abs() < 1e-12);
            assert!(haar_unpool(&haar_pool(&x, f, 1.0), f, 1.0).relative_error(&x) < 1e-15);
        }
    }

    #[test]
    fn haar_low_band_is_scaled_average() {
        let x = random(1, 2, 2, 4);
        let y = haar_pool(&x, [2, 2], 1.0);
        let mean = x.data.iter().sum::<f64>() / 4.0;
        assert!((y.data[0] - 2.0 * mean).abs() < 1e-15);
    }
}
