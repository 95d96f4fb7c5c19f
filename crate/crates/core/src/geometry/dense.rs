use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{ensure, Error, Result};
use crate::net::{ActivationTrace, LayerKind, Network, ReluMode, RunOptions, SkipStore};
use crate::tensor::Features;

/// Default bound on the input dimension of densely materialized maps.
pub const DEFAULT_DENSE_CAP: usize = 4096;

pub(crate) fn check_cap(dim: usize, cap: usize) -> Result<()> {
    if dim > cap {
        return Err(Error::CapExceeded { rows: dim, cap });
    }
    Ok(())
}

pub(crate) fn unit(shape: [usize; 3], j: usize) -> Features {
    let mut f = Features::zeros(shape[0], shape[1], shape[2]);
    f.data[j] = 1.0;
    f
}

pub(crate) fn mode(trace: Option<&ActivationTrace>) -> ReluMode<'_> {
    trace.map_or(ReluMode::Identity, ReluMode::Fixed)
}

/// Skips with every value replaced by zeros of the same shape.
pub(crate) fn zeroed(skips: &SkipStore) -> SkipStore {
    skips.iter().map(|(k, v)| (k.clone(), v.zeros_like())).collect()
}

/// Jacobian (`out_dim × in_dim`) of `layers[range]` with ReLUs replaced by the
/// trace patterns (or identities), biases off and external skips zeroed.
pub(crate) fn dense_range(
    net: &Network,
    params: &[f64],
    range: Range<usize>,
    in_shape: [usize; 3],
    skips: &SkipStore,
    trace: Option<&ActivationTrace>,
    cap: usize,
) -> Result<DMatrix<f64>> {
    let n_in = in_shape.iter().product();
    check_cap(n_in, cap)?;
    let opts = RunOptions {
        relu: mode(trace),
        bias: false,
    };
    let zero_skips = zeroed(skips);
    let mut columns = Vec::with_capacity(n_in);
    for j in 0..n_in {
        let mut s = zero_skips.clone();
        columns.push(net.run(params, range.clone(), &unit(in_shape, j), &mut s, opts)?.output.data);
    }
    let n_out = columns.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(n_out, n_in, |r, c| columns[c][r]))
}

/// Explicit matrices of one layer in linear (or fixed-pattern) mode.
///
/// `main` is the Jacobian with respect to the layer input, so an encoder
/// layer acts as `z^l = Eᵀ z^{l−1}` with `E = mainᵀ` and a decoder layer as
/// `z̃^{l−1} = D z̃^l` with `D = main`. `skip` is the Jacobian with respect to
/// the joined skip signal (the `S̃` block) for joins, and the identity copy
/// map (the `S` block) for emits.
#[derive(Clone, Debug)]
pub struct LayerMatrices {
    pub main: DMatrix<f64>,
    pub skip: Option<DMatrix<f64>>,
}

impl LayerMatrices {
    /// Encoder-convention matrix `E` with `z^l = Eᵀ z^{l−1}`.
    pub fn e(&self) -> DMatrix<f64> {
        self.main.transpose()
    }
}

pub fn layer_matrices(
    net: &Network,
    params: &[f64],
    layer: usize,
    extents: [usize; 2],
    trace: Option<&ActivationTrace>,
    cap: usize,
) -> Result<LayerMatrices> {
    ensure!(layer < net.spec.len(), InvalidArgument, "layer {layer} does not exist");
    ensure!(
        net.spec.is_piecewise_linear(),
        Unsupported,
        "input-statistics normalization has no fixed matrix"
    );
    let shapes = net.spec.shapes(extents)?;
    let in_shape = net.spec.input_shape_of(layer, extents)?;
    let mut skips = SkipStore::new();
    let kind = &net.spec.layers[layer];
    let mut skip_shape = None;
    if let LayerKind::SkipJoin { tag, .. } = kind {
        let emit = net
            .spec
            .layers
            .iter()
            .position(|l| matches!(l, LayerKind::SkipEmit { tag: t } if t == tag))
            .expect("validated skip tag");
        let s = net.spec.input_shape_of(emit, extents)?;
        skips.insert(tag.clone(), Features::zeros(s[0], s[1], s[2]));
        skip_shape = Some(s);
    }
    let main = dense_range(net, params, layer..layer + 1, in_shape, &skips, trace, cap)?;
    let skip = match (kind, skip_shape) {
        (LayerKind::SkipJoin { tag, .. }, Some(s)) => {
            let n_s: usize = s.iter().product();
            check_cap(n_s, cap)?;
            let opts = RunOptions {
                relu: mode(trace),
                bias: false,
            };
            let zero_in = Features::zeros(in_shape[0], in_shape[1], in_shape[2]);
            let n_out: usize = shapes[layer].iter().product();
            let mut m = DMatrix::zeros(n_out, n_s);
            for j in 0..n_s {
                let mut st = SkipStore::new();
                st.insert(tag.clone(), unit(s, j));
                let out = net.run(params, layer..layer + 1, &zero_in, &mut st, opts)?.output;
                m.set_column(j, &nalgebra::DVector::from_vec(out.data));
            }
            Some(m)
        }
        (LayerKind::SkipEmit { .. }, _) => {
            let n: usize = in_shape.iter().product();
            Some(DMatrix::identity(n, n))
        }
        _ => None,
    };
    Ok(LayerMatrices { main, skip })
}
