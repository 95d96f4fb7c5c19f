use std::f64::consts::PI;

use rand::Rng;

use crate::error::{ensure, Result};
use crate::tensor::{ComplexTensor, Seed, C64};

/// Smooth step from 1 inside to 0 outside the unit level set, width `edge`.
fn soft_inside(rho: f64, edge: f64) -> f64 {
    0.5 * (1.0 - ((rho - 1.0) / edge).tanh())
}

/// Normalized coordinate in `[-1, 1)` of pixel `i` on an axis of length `n`.
fn coord(i: usize, n: usize) -> f64 {
    2.0 * (i as f64 - (n / 2) as f64) / n as f64
}

/// Complex phantom of smooth-edged ellipses under a quadratic phase.
///
/// Ellipses are painted in order (each blends toward its own intensity), so
/// the magnitude stays in `[0, 1]`.
pub fn make_phantom(extents: [usize; 2], n_ellipses: usize, seed: Seed) -> Result<ComplexTensor> {
    let [h, w] = extents;
    ensure!(h >= 16 && w >= 16, InvalidArgument, "phantom extents must be >= 16, got {h}x{w}");
    ensure!(n_ellipses >= 1, InvalidArgument, "need at least one ellipse");
    let mut rng = seed.rng();
    let mut mag = vec![0.0f64; h * w];
    for e in 0..n_ellipses {
        // the first ellipse is a large body outline
        let (cy, cx, ay, ax) = if e == 0 {
            (
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                rng.random_range(0.7..0.85),
                rng.random_range(0.6..0.8),
            )
        } else {
            (
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(0.08..0.35),
                rng.random_range(0.08..0.35),
            )
        };
        let theta: f64 = rng.random_range(0.0..PI);
        let intensity: f64 = rng.random_range(0.2..=1.0);
        let (s, c) = theta.sin_cos();
        for y in 0..h {
            for x in 0..w {
                let (py, px) = (coord(y, h) - cy, coord(x, w) - cx);
                let u = c * px + s * py;
                let v = -s * px + c * py;
                let rho = ((u / ax).powi(2) + (v / ay).powi(2)).sqrt();
                let m = soft_inside(rho, 0.06);
                let p = &mut mag[y * w + x];
                *p += m * (intensity - *p);
            }
        }
    }
    let coeffs: Vec<f64> = (0..6).map(|_| rng.random_range(-0.5..0.5)).collect();
    let data = (0..h * w)
        .map(|idx| {
            let (y, x) = (coord(idx / w, h), coord(idx % w, w));
            let phase = PI
                * (coeffs[0] + coeffs[1] * x + coeffs[2] * y + coeffs[3] * x * y + coeffs[4] * x * x + coeffs[5] * y * y);
            C64::from_polar(mag[idx], phase)
        })
        .collect();
    ComplexTensor::new(vec![h, w], data)
}

/// Coil sensitivity maps stacked as `[n_coils, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilSet {
    pub maps: ComplexTensor,
}

impl CoilSet {
    pub fn n_coils(&self) -> usize {
        self.maps.shape()[0]
    }

    /// Coil-weighted images `s_c · x` for an `[H, W]` image.
    pub fn weight(&self, image: &ComplexTensor) -> Result<ComplexTensor> {
        ensure!(
            image.shape() == &self.maps.shape()[1..],
            Shape,
            "image {:?} vs coil maps {:?}",
            image.shape(),
            self.maps.shape()
        );
        let n = image.len();
        let mut out = self.maps.clone();
        for c in 0..self.n_coils() {
            for (o, x) in out.slab_mut(c).iter_mut().zip(image.data()) {
                *o *= x;
            }
        }
        debug_assert_eq!(out.len(), n * self.n_coils());
        Ok(out)
    }
}

/// Gaussian-lobe coils placed on a ring around the field of view, normalized
/// so the per-pixel sum of squared magnitudes is 1.
pub fn make_coil_maps(extents: [usize; 2], n_coils: usize, seed: Seed) -> Result<CoilSet> {
    let [h, w] = extents;
    ensure!(n_coils >= 1, InvalidArgument, "n_coils must be >= 1");
    ensure!(h >= 1 && w >= 1, InvalidArgument, "empty coil grid");
    let mut rng = seed.rng();
    let sigma = 0.9;
    let mut maps = vec![C64::new(0.0, 0.0); n_coils * h * w];
    for c in 0..n_coils {
        let angle = 2.0 * PI * c as f64 / n_coils as f64 + rng.random_range(-0.2..0.2);
        let radius = rng.random_range(1.0..1.3);
        let (cy, cx) = (radius * angle.sin(), radius * angle.cos());
        let phase0: f64 = rng.random_range(-PI..PI);
        let (gy, gx): (f64, f64) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        for y in 0..h {
            for x in 0..w {
                let (py, px) = (coord(y, h), coord(x, w));
                let d2 = (py - cy).powi(2) + (px - cx).powi(2);
                let amp = (-d2 / (2.0 * sigma * sigma)).exp();
                maps[(c * h + y) * w + x] = C64::from_polar(amp, phase0 + gy * py + gx * px);
            }
        }
    }
    let plane = h * w;
    for p in 0..plane {
        let s: f64 = (0..n_coils).map(|c| maps[c * plane + p].norm_sqr()).sum::<f64>().sqrt();
        for c in 0..n_coils {
            maps[c * plane + p] /= s;
        }
    }
    Ok(CoilSet {
        maps: ComplexTensor::new(vec![n_coils, h, w], maps)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_is_deterministic_and_bounded() {
        let a = make_phantom([32, 32], 1, Seed(4)).unwrap();
        let b = make_phantom([32, 32], 1, Seed(4)).unwrap();
        assert_eq!(a, b);
        let max = a.data().iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(max > 0.0 && max <= 1.0 + 1e-12);
        assert_ne!(a, make_phantom([32, 32], 1, Seed(5)).unwrap());
    }

    #[test]
    fn phantom_has_nontrivial_phase() {
        let x = make_phantom([32, 32], 4, Seed(1)).unwrap();
        let imag: f64 = x.data().iter().map(|v| v.im.abs()).sum();
        assert!(imag > 1.0);
    }

    #[test]
    fn phantom_regression_anchor() {
        let x = make_phantom([64, 64], 8, Seed(2024)).unwrap();
        let mean = x.data().iter().map(|v| v.norm()).sum::<f64>() / x.len() as f64;
        assert!((mean - PHANTOM_MEAN_64_8_2024).abs() < 1e-12, "{mean:.17}");
    }

    // Frozen from the first run of `phantom_regression_anchor`.
    const PHANTOM_MEAN_64_8_2024: f64 = 0.318_650_290_390_871_12;

    #[test]
    fn phantom_rejects_small_grids() {
        assert!(make_phantom([8, 32], 1, Seed(0)).is_err());
        assert!(make_phantom([32, 32], 0, Seed(0)).is_err());
    }

    #[test]
    fn coil_maps_are_normalized() {
        let one = make_coil_maps([16, 16], 1, Seed(3)).unwrap();
        assert!(one.maps.data().iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        let set = make_coil_maps([20, 24], 5, Seed(3)).unwrap();
        let plane = 20 * 24;
        for p in 0..plane {
            let s: f64 = (0..5).map(|c| set.maps.data()[c * plane + p].norm_sqr()).sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
        assert!(make_coil_maps([16, 16], 0, Seed(3)).is_err());
    }

    #[test]
    fn coil_maps_are_smooth() {
        let set = make_coil_maps([32, 32], 4, Seed(8)).unwrap();
        let mut worst: f64 = 0.0;
        for c in 0..4 {
            for y in 0..32 {
                for x in 0..32 {
                    let v = set.maps.get(&[c, y, x]);
                    if x + 1 < 32 {
                        worst = worst.max((v - set.maps.get(&[c, y, x + 1])).norm());
                    }
                    if y + 1 < 32 {
                        worst = worst.max((v - set.maps.get(&[c, y + 1, x])).norm());
                    }
                }
            }
        }
        assert!(worst <= 0.2, "{worst}");
    }
}
