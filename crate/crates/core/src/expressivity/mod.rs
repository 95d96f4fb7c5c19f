//! Aggregation schemes that enlarge the set of piecewise-linear
//! representations of a residual encoder-decoder `T(z) = z + U(z)`:
//! bootstrap subsampling, adaptive residual learning and iterative
//! aggregation, each combined by an attention head.

mod attention;
mod basis;
mod census;
mod overhead;
mod scheme;

pub use attention::{
    attention_mlp_weights, global_pool, sigmoid, AttentionConv1x1, AttentionMlp, GapMode, MixInit, MlpCache, MLP_HIDDEN,
};
pub use basis::{aggregated_basis, candidate_bases, mask_operator, residual_pair, AggregatedBasis};
pub use census::SystemPatterns;
pub use overhead::{param_overhead, Overhead, REFERENCE_OVERHEADS};
pub use scheme::{AttentionKind, HeadCache, SchemeConfig, SchemeKind, System, SystemInput, SystemPass};

#[cfg(test)]
mod tests;
