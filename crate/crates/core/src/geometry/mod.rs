//! Explicit bases, frame conditions, hyperplanes and activation regions of
//! piecewise-linear encoder-decoder networks.
//!
//! Everything here is materialized densely; operations refuse inputs larger
//! than a cap (see [`DEFAULT_DENSE_CAP`]).

mod basis;
mod census;
mod dense;
mod frames;
mod hyperplane;

pub use basis::{extract_basis, AtomGroup, BasisDecomposition};
pub use census::{region_census, NetworkPatterns, PatternSource, Probes, RegionCensus};
pub use dense::{layer_matrices, LayerMatrices, DEFAULT_DENSE_CAP};
pub use frames::{
    analysis_taps, build_frame_filters, build_frame_net, check_perfect_reconstruction, frame_constant, frame_report,
    synthesis_kernel, synthesis_taps, CheckRoute, FilterResidual, FrameConfig, FrameNet, FrameNetConfig, FramePair,
    FramePooling, FrameReport, LevelReport, PoolResidual, PrCheck, PR_TOLERANCE,
};
pub use hyperplane::{decoder_frame_subset, hyperplane_report, DecoderSubset, HyperplaneReport, HyperplaneRow};

use crate::error::Result;
use crate::net::{LayerKind, Network, NetworkSpec};

/// Two 1×1 convolutions with ReLUs on a 2-channel 1×1 input: two neurons per
/// layer acting on `ℝ²`.
pub fn planar_two_layer() -> Result<Network> {
    Network::new(NetworkSpec::new(
        2,
        vec![
            LayerKind::conv1x1(2),
            LayerKind::Relu,
            LayerKind::conv1x1(2),
            LayerKind::Relu,
        ],
        2,
    )?)
}
