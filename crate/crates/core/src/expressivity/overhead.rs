use serde::Serialize;

use super::attention::{AttentionConv1x1, AttentionMlp};
use super::scheme::AttentionKind;

/// Published overhead figures for reference configurations:
/// `(attention, N, N_c, count)`.
pub const REFERENCE_OVERHEADS: [(AttentionKind, usize, usize, usize); 3] = [
    (AttentionKind::Mlp, 10, 16, 1355),
    (AttentionKind::Conv1x1, 2, 16, 2080),
    (AttentionKind::Conv1x1, 4, 16, 4160),
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Overhead {
    pub attention: AttentionKind,
    pub n: usize,
    pub n_coils: usize,
    /// Trainable parameters added by the attention head.
    pub count: usize,
    pub formula: String,
    pub base_params: usize,
    /// `100·count/base_params`.
    pub percent: f64,
    /// Reference figure for this configuration, if one exists.
    pub reference: Option<usize>,
    /// `reference − count`.
    pub deviation: Option<i64>,
}

/// MLP: `2·64·N + 64 + N` (both weight matrices, hidden and output biases).
/// `1×1` convolution: `N·(2N_c)² + 2N_c` (weights plus one bias per output
/// channel). Uniform averaging adds nothing.
pub fn param_overhead(attention: AttentionKind, n: usize, n_coils: usize, base_params: usize) -> Overhead {
    let (count, formula) = match attention {
        AttentionKind::Mlp => (AttentionMlp { n }.n_params(), format!("{n}·64·2 + 64 + {n}")),
        AttentionKind::Conv1x1 => (
            AttentionConv1x1 { n, channels: 2 * n_coils }.n_params(),
            format!("{n}·(2·{n_coils})² + 2·{n_coils}"),
        ),
        AttentionKind::Uniform => (0, "0".into()),
    };
    let reference = REFERENCE_OVERHEADS
        .iter()
        .find(|r| r.0 == attention && r.1 == n && (r.2 == n_coils || attention == AttentionKind::Mlp))
        .map(|r| r.3);
    Overhead {
        attention,
        n,
        n_coils,
        count,
        formula,
        base_params,
        percent: if base_params == 0 { f64::INFINITY } else { 100.0 * count as f64 / base_params as f64 },
        reference,
        deviation: reference.map(|r| r as i64 - count as i64),
    }
}
