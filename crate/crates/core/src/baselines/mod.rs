//! Autocalibrated k-space interpolation baselines: linear GRAPPA and the
//! three-layer RAKI network.

mod grappa;
mod raki;

pub use grappa::{
    acs_rect, grappa_calibrate, grappa_reconstruct, lattice_factors, source_offsets, GrappaKernel, OffsetClass,
    DEFAULT_KERNEL, DEFAULT_RIDGE,
};
pub use raki::{raki_reconstruct, raki_train, RakiConfig, RakiModel};
