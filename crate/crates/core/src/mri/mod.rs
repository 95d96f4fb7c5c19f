//! Synthetic multi-coil MRI: phantoms, coil sensitivities, Cartesian sampling
//! masks with an autocalibration (ACS) block, the downsampling operator and
//! on-disk datasets.
//!
//! k-space is always stored centered: DC sits at index `⌊n/2⌋` on each axis.

mod dataset;
mod mask;
mod phantom;

pub use dataset::{
    exact_linear_kspace, generate_dataset, generate_sample, load_dataset, load_sample, save_dataset, save_sample,
    DataConfig, LinearModel, Sample, SampleMeta,
};
pub use mask::{
    apply_forward, bootstrap_masks, make_mask, read_mask, read_mask_file, write_mask, write_mask_file, SamplingMask,
};
pub use phantom::{make_coil_maps, make_phantom, CoilSet};

use crate::error::{ensure, Result};
use crate::tensor::{fft2, ifft2, ComplexTensor};

/// Circular shift by `shift` along one axis.
fn roll(x: &ComplexTensor, axis: usize, shift: usize) -> ComplexTensor {
    let shape = x.shape().to_vec();
    let n = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.clone();
    let src = x.data();
    let dst = out.data_mut();
    for o in 0..outer {
        for k in 0..n {
            let from = (o * n + k) * stride;
            let to = (o * n + (k + shift) % n) * stride;
            dst[to..to + stride].copy_from_slice(&src[from..from + stride]);
        }
    }
    out
}

fn last_two_axes(x: &ComplexTensor) -> Result<(usize, usize)> {
    ensure!(x.rank() >= 2, Shape, "need at least two axes, got {:?}", x.shape());
    Ok((x.rank() - 2, x.rank() - 1))
}

/// Moves index 0 to the center (`⌊n/2⌋`) along the two trailing axes.
pub fn fftshift(x: &ComplexTensor) -> Result<ComplexTensor> {
    let (a, b) = last_two_axes(x)?;
    let y = roll(x, a, x.shape()[a] / 2);
    Ok(roll(&y, b, x.shape()[b] / 2))
}

/// Inverse of [`fftshift`].
pub fn ifftshift(x: &ComplexTensor) -> Result<ComplexTensor> {
    let (a, b) = last_two_axes(x)?;
    let y = roll(x, a, x.shape()[a] - x.shape()[a] / 2);
    Ok(roll(&y, b, x.shape()[b] - x.shape()[b] / 2))
}

/// Centered unitary k-space of an image (or stack of images, `[.., H, W]`).
pub fn to_kspace(image: &ComplexTensor) -> Result<ComplexTensor> {
    let axes = last_two_axes(image)?;
    fftshift(&fft2(&ifftshift(image)?, axes)?)
}

/// Inverse of [`to_kspace`].
pub fn to_image(kspace: &ComplexTensor) -> Result<ComplexTensor> {
    let axes = last_two_axes(kspace)?;
    fftshift(&ifft2(&ifftshift(kspace)?, axes)?)
}

/// Representation a network consumes and produces.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    #[default]
    Image,
    Kspace,
}

impl Domain {
    /// Centered k-space expressed in this domain.
    pub fn from_kspace(self, kspace: &ComplexTensor) -> Result<ComplexTensor> {
        match self {
            Domain::Image => to_image(kspace),
            Domain::Kspace => Ok(kspace.clone()),
        }
    }

    /// Coil images of a tensor expressed in this domain.
    pub fn to_image(self, x: &ComplexTensor) -> Result<ComplexTensor> {
        match self {
            Domain::Image => Ok(x.clone()),
            Domain::Kspace => to_image(x),
        }
    }
}
