use nalgebra::{DMatrix, DVector};

use super::dense::{check_cap, mode, unit, zeroed};
use crate::error::{ensure, Result};
use crate::net::{ActivationTrace, LayerKind, Network, RunOptions, SkipStore};
use crate::tensor::Features;

/// A block of atoms: the code itself or a skip that bypasses the split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AtomGroup {
    /// `"code"` or the skip tag.
    pub name: String,
    pub shape: [usize; 3],
    pub offset: usize,
}

/// Explicit analysis/synthesis atoms of a network at one activation pattern.
///
/// Inputs are augmented with a trailing 1 so biases become ordinary atom
/// coordinates: `B` is `(input_dim + 1) × n_atoms` and the last atom is the
/// constant one (`b = e_last`, `b̃` = decoder response to a zero code).
/// `B̃ Bᵀ [z; 1]` reproduces the forward output.
#[derive(Clone, Debug)]
pub struct BasisDecomposition {
    pub b: DMatrix<f64>,
    pub b_tilde: DMatrix<f64>,
    /// Pattern that selected the atoms; `None` in linear mode.
    pub pattern: Option<ActivationTrace>,
    pub groups: Vec<AtomGroup>,
    pub input_shape: [usize; 3],
    pub output_shape: [usize; 3],
}

impl BasisDecomposition {
    pub fn input_dim(&self) -> usize {
        self.b.nrows() - 1
    }

    pub fn n_atoms(&self) -> usize {
        self.b.ncols()
    }

    /// `[z; 1]`.
    pub fn augment(z: &Features) -> DVector<f64> {
        let mut v = z.data.clone();
        v.push(1.0);
        DVector::from_vec(v)
    }

    /// Atom coefficients `⟨bᵢ, z'⟩`.
    pub fn coefficients(&self, z: &Features) -> Result<DVector<f64>> {
        ensure!(z.len() == self.input_dim(), Shape, "input has {} entries, basis expects {}", z.len(), self.input_dim());
        Ok(self.b.tr_mul(&Self::augment(z)))
    }

    /// `Σᵢ ⟨bᵢ, z'⟩ b̃ᵢ`.
    pub fn reconstruct(&self, z: &Features) -> Result<Features> {
        let v = &self.b_tilde * self.coefficients(z)?;
        let [c, h, w] = self.output_shape;
        Features::new(c, h, w, v.data.into())
    }

    /// Top-left `input_dim × (n_atoms − 1)` block: the atoms without bias row
    /// and constant column.
    pub fn linear_part(&self) -> DMatrix<f64> {
        self.b.view((0, 0), (self.input_dim(), self.n_atoms() - 1)).into_owned()
    }
}

/// Skips emitted inside `layers[..split]` and joined inside `layers[split..]`.
pub(crate) fn crossing_skips(net: &Network, split: usize) -> Vec<(String, usize)> {
    let layers = &net.spec.layers;
    layers[..split]
        .iter()
        .enumerate()
        .filter_map(|(i, l)| match l {
            LayerKind::SkipEmit { tag } => layers[split..]
                .iter()
                .any(|j| matches!(j, LayerKind::SkipJoin { tag: t, .. } if t == tag))
                .then(|| (tag.clone(), i)),
            _ => None,
        })
        .collect()
}

/// Basis at `z` (ReLU patterns of `z` frozen) or, with `z = None`, the
/// input-independent basis of the linear-mode network.
pub fn extract_basis(
    net: &Network,
    params: &[f64],
    z: Option<&Features>,
    extents: [usize; 2],
    cap: usize,
) -> Result<BasisDecomposition> {
    ensure!(
        net.spec.is_piecewise_linear(),
        Unsupported,
        "input-statistics normalization has no fixed basis"
    );
    let shapes = net.spec.shapes(extents)?;
    let input_shape = [net.spec.input_channels, extents[0], extents[1]];
    let n_in: usize = input_shape.iter().product();
    check_cap(n_in, cap)?;
    if let Some(z) = z {
        ensure!(z.shape() == input_shape, Shape, "input {:?} does not match {input_shape:?}", z.shape());
    }
    let pattern = match z {
        Some(z) => Some(net.forward(params, z, RunOptions::default())?.trace),
        None => None,
    };
    let trace = pattern.as_ref();
    let split = net.spec.code_at;
    let n_layers = net.spec.len();
    let code_shape = if split == 0 { input_shape } else { shapes[split - 1] };
    let output_shape = if n_layers == 0 { input_shape } else { shapes[n_layers - 1] };

    let mut groups = vec![AtomGroup {
        name: "code".into(),
        shape: code_shape,
        offset: 0,
    }];
    let mut offset = code_shape.iter().product::<usize>();
    for (tag, emit) in crossing_skips(net, split) {
        let shape = net.spec.input_shape_of(emit, extents)?;
        groups.push(AtomGroup {
            name: tag,
            shape,
            offset,
        });
        offset += shape.iter().product::<usize>();
    }
    let n_code = offset;
    check_cap(n_code, cap)?;

    let gather = |code: &Features, skips: &SkipStore| -> Vec<f64> {
        let mut v = Vec::with_capacity(n_code);
        v.extend_from_slice(&code.data);
        for g in &groups[1..] {
            v.extend_from_slice(&skips[&g.name].data);
        }
        v
    };

    // encoder: unit pushes without bias, then one bias pass on a zero input
    let lin = RunOptions {
        relu: mode(trace),
        bias: false,
    };
    let mut b = DMatrix::zeros(n_in + 1, n_code + 1);
    for j in 0..n_in {
        let mut skips = SkipStore::new();
        let pass = net.run(params, 0..split, &unit(input_shape, j), &mut skips, lin)?;
        for (i, v) in gather(&pass.output, &skips).into_iter().enumerate() {
            b[(j, i)] = v;
        }
    }
    let zero_in = Features::zeros(input_shape[0], input_shape[1], input_shape[2]);
    let with_bias = RunOptions { bias: true, ..lin };
    let mut skips = SkipStore::new();
    let pass = net.run(params, 0..split, &zero_in, &mut skips, with_bias)?;
    for (i, v) in gather(&pass.output, &skips).into_iter().enumerate() {
        b[(n_in, i)] = v;
    }
    b[(n_in, n_code)] = 1.0;

    // decoder: one column per atom, plus the zero-code response
    let n_out: usize = output_shape.iter().product();
    let mut b_tilde = DMatrix::zeros(n_out, n_code + 1);
    let zero_skips = zeroed(&skips);
    let zero_code = Features::zeros(code_shape[0], code_shape[1], code_shape[2]);
    let code_len: usize = code_shape.iter().product();
    for i in 0..n_code {
        let mut s = zero_skips.clone();
        let code = if i < code_len {
            unit(code_shape, i)
        } else {
            let g = groups.iter().rev().find(|g| g.offset <= i).expect("code group at offset 0");
            s.insert(g.name.clone(), unit(g.shape, i - g.offset));
            zero_code.clone()
        };
        let out = net.run(params, split..n_layers, &code, &mut s, lin)?.output;
        b_tilde.set_column(i, &DVector::from_vec(out.data));
    }
    let mut s = zero_skips;
    let out = net.run(params, split..n_layers, &zero_code, &mut s, with_bias)?.output;
    b_tilde.set_column(n_code, &DVector::from_vec(out.data));

    let mut groups = groups;
    groups.push(AtomGroup {
        name: "const".into(),
        shape: [1, 1, 1],
        offset: n_code,
    });
    Ok(BasisDecomposition {
        b,
        b_tilde,
        pattern,
        groups,
        input_shape,
        output_shape,
    })
}

/// Matrix-free reconstruction error `‖v − z‖/‖z‖` of one probe.
pub(crate) fn forward_identity_error(net: &Network, params: &[f64], z: &Features) -> Result<f64> {
    let v = net.forward(params, z, RunOptions::linear())?.output;
    ensure!(v.shape() == z.shape(), Shape, "output {:?} differs from input {:?}", v.shape(), z.shape());
    Ok(v.relative_error(z))
}
