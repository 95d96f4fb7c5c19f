use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensor::ComplexTensor;

/// Real single-channel image, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(data.len() == height * width, Shape, "image data length {} != {height}x{width}", data.len());
        Ok(Self { height, width, data })
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        ensure!(
            self.height == other.height && self.width == other.width,
            Shape,
            "images differ: {}x{} vs {}x{}",
            self.height,
            self.width,
            other.height,
            other.width
        );
        Ok(())
    }
}

/// Pixel-wise `√(Σ_c |x_c|²)` of a `[C, H, W]` (or `[H, W]`) coil stack.
pub fn ssos(coil_images: &ComplexTensor) -> Result<Image> {
    let (c, h, w) = match *coil_images.shape() {
        [c, h, w] => (c, h, w),
        [h, w] => (1, h, w),
        _ => return Err(crate::Error::Shape(format!("expected [C, H, W], got {:?}", coil_images.shape()))),
    };
    let n = h * w;
    let d = coil_images.data();
    let data = (0..n)
        .map(|p| (0..c).map(|k| d[k * n + p].norm_sqr()).sum::<f64>().sqrt())
        .collect();
    Image::new(h, w, data)
}

/// `20·log₁₀(MAX/√MSE)` with `MAX = max(x_star)`; `+∞` when the images agree.
pub fn psnr(x: &Image, x_star: &Image) -> Result<f64> {
    x.check_same(x_star)?;
    let mse = x.data.iter().zip(&x_star.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (x_star.max() / mse.sqrt()).log10())
}

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_WINDOW: usize = 8;

/// Summed-area table with a zero border: `t[(y+1)(w+1) + x+1] = Σ_{≤y,≤x}`.
fn integral(h: usize, w: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut t = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += f(y * w + x);
            t[(y + 1) * (w + 1) + x + 1] = t[y * (w + 1) + x + 1] + row;
        }
    }
    t
}

/// Mean SSIM over all `window × window` positions (stride 1, uniform
/// weights, population statistics) with `c₁ = (k₁L)²`, `c₂ = (k₂L)²`.
pub fn ssim(x: &Image, x_star: &Image, dynamic_range: f64, window: usize) -> Result<f64> {
    x.check_same(x_star)?;
    ensure!(dynamic_range > 0.0, InvalidArgument, "dynamic range must be positive");
    ensure!(
        window >= 1 && window <= x.height && window <= x.width,
        InvalidArgument,
        "window {window} larger than {}x{} image",
        x.height,
        x.width
    );
    let (h, w) = (x.height, x.width);
    let (a, b) = (&x.data, &x_star.data);
    let sa = integral(h, w, |i| a[i]);
    let sb = integral(h, w, |i| b[i]);
    let saa = integral(h, w, |i| a[i] * a[i]);
    let sbb = integral(h, w, |i| b[i] * b[i]);
    let sab = integral(h, w, |i| a[i] * b[i]);
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);
    let n = (window * window) as f64;
    let stride = w + 1;
    let rect = |t: &[f64], y: usize, x: usize| {
        t[(y + window) * stride + x + window] - t[y * stride + x + window] - t[(y + window) * stride + x] + t[y * stride + x]
    };
    let mut total = 0.0;
    let (ny, nx) = (h - window + 1, w - window + 1);
    for y in 0..ny {
        for xx in 0..nx {
            let mx = rect(&sa, y, xx) / n;
            let my = rect(&sb, y, xx) / n;
            let vx = rect(&saa, y, xx) / n - mx * mx;
            let vy = rect(&sbb, y, xx) / n - my * my;
            let cxy = rect(&sab, y, xx) / n - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (ny * nx) as f64)
}

/// [`ssim`] with `L = max(x_star)` and the default window.
pub fn ssim_default(x: &Image, x_star: &Image) -> Result<f64> {
    ssim(x, x_star, x_star.max(), SSIM_WINDOW)
}
