//! Encoder-decoder CNNs as convolutional framelets, applied to accelerated
//! multi-coil MRI reconstruction.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`] complex tensors, FFT, circular convolution, least squares
//! * [`mri`] synthetic phantoms, coils, sampling masks and datasets
//! * [`net`] layer graphs, forward/backward passes and activation traces
//! * [`geometry`] basis extraction, frame conditions, hyperplanes, region census
//! * [`expressivity`] bootstrap, adaptive residual and iterative aggregation
//! * [`trainer`] losses, Adam, schedules and gradient checks
//! * [`baselines`] GRAPPA and RAKI
//! * [`eval`] SSoS, PSNR, SSIM and reports
//! * [`experiment`] config files, experiment bundles and the self test

pub mod baselines;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod expressivity;
pub mod geometry;
pub mod mri;
pub mod net;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
