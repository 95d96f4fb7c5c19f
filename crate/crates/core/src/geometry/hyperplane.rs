use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::dense::{dense_range, zeroed};
use crate::error::{ensure, Result};
use crate::net::{LayerKind, Network, Pass, RunOptions, SkipStore};
use crate::tensor::Features;

/// One neuron of a ReLU layer viewed as a hyperplane in the space of the
/// previous ReLU output.
#[derive(Clone, Debug, Serialize)]
pub struct HyperplaneRow {
    pub neuron: usize,
    /// `E_i`: gradient of the pre-activation with respect to the unconstrained
    /// previous-layer feature.
    #[serde(skip)]
    pub normal: Vec<f64>,
    /// `Λ(z^{l−1}) E_i`: coordinates of inactive previous neurons are zero.
    #[serde(skip)]
    pub effective_normal: Vec<f64>,
    pub offset: f64,
    pub normal_norm: f64,
    /// `(⟨E_i, z^{l−1}⟩ + b_i)/‖E_i‖`; `None` for a zero normal.
    pub signed_distance: Option<f64>,
    /// Pre-activation recorded by the forward pass.
    pub pre_activation: f64,
    pub active: bool,
    /// `z_iˡ`, the ReLU output.
    pub activation: f64,
    /// Number of coordinates zeroed by the previous pattern.
    pub degenerate_coordinates: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct HyperplaneReport {
    pub layer: usize,
    /// Index of the previous ReLU layer (`None`: the network input).
    pub previous_relu: Option<usize>,
    pub rows: Vec<HyperplaneRow>,
}

impl HyperplaneReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "neuron,active,pre_activation,activation,offset,normal_norm,signed_distance,degenerate_coordinates\n",
        );
        for r in &self.rows {
            let d = r.signed_distance.map_or(String::new(), |d| format!("{d:e}"));
            s.push_str(&format!(
                "{},{},{:e},{:e},{:e},{:e},{},{}\n",
                r.neuron, r.active as u8, r.pre_activation, r.activation, r.offset, r.normal_norm, d, r.degenerate_coordinates
            ));
        }
        s
    }
}

/// Forward pass that also returns every emitted skip.
fn full_pass(net: &Network, params: &[f64], z: &Features) -> Result<(Pass, SkipStore)> {
    let mut skips = SkipStore::new();
    let pass = net.run(params, 0..net.spec.len(), z, &mut skips, RunOptions::default())?;
    Ok((pass, skips))
}

fn relu_layer(net: &Network, layer: usize) -> Result<()> {
    ensure!(layer < net.spec.len(), InvalidArgument, "layer {layer} does not exist");
    ensure!(net.spec.layers[layer].is_relu(), InvalidArgument, "layer {layer} is not a ReLU");
    ensure!(
        net.spec.is_piecewise_linear(),
        Unsupported,
        "input-statistics normalization has no fixed hyperplanes"
    );
    Ok(())
}

/// Affine map of a ReLU-free segment: `(J, b)` with `output = J x + b`.
/// Skips emitted before the segment are treated as constants.
fn segment_affine(
    net: &Network,
    params: &[f64],
    range: Range<usize>,
    input_shape: [usize; 3],
    skips: &SkipStore,
    cap: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let j = dense_range(net, params, range.clone(), input_shape, skips, None, cap)?;
    let zero = Features::zeros(input_shape[0], input_shape[1], input_shape[2]);
    let mut s = skips.clone();
    let b = net.run(params, range, &zero, &mut s, RunOptions::linear())?.output;
    Ok((j, DVector::from_vec(b.data)))
}

pub fn hyperplane_report(
    net: &Network,
    params: &[f64],
    z: &Features,
    layer: usize,
    cap: usize,
) -> Result<HyperplaneReport> {
    relu_layer(net, layer)?;
    let (pass, skips) = full_pass(net, params, z)?;
    let previous = net.spec.relu_layers().into_iter().filter(|&r| r < layer).last();
    let start = previous.map_or(0, |p| p + 1);
    let x = &pass.inputs[start];
    let (jac, offset) = segment_affine(net, params, start..layer, x.shape(), &skips, cap)?;
    let record = pass.trace.record(layer).expect("ReLU layers are always recorded");
    let prev_mask = previous.map(|p| pass.trace.record(p).expect("recorded").active.clone());
    let output = &pass.inputs[layer + 1..].first().cloned().unwrap_or_else(|| pass.output.clone());
    let xv = DVector::from_column_slice(&x.data);
    let pre = &jac * &xv + &offset;

    let rows = (0..jac.nrows())
        .map(|i| {
            let normal: Vec<f64> = jac.row(i).iter().copied().collect();
            let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
            let effective_normal: Vec<f64> = match &prev_mask {
                Some(m) => normal.iter().zip(m).map(|(&v, &a)| if a { v } else { 0.0 }).collect(),
                None => normal.clone(),
            };
            HyperplaneRow {
                neuron: i,
                degenerate_coordinates: prev_mask.as_ref().map_or(0, |m| m.iter().filter(|a| !**a).count()),
                normal,
                effective_normal,
                offset: offset[i],
                normal_norm: norm,
                signed_distance: (norm > 0.0).then(|| pre[i] / norm),
                pre_activation: record.pre.data[i],
                active: record.active[i],
                activation: output.data[i],
            }
        })
        .collect();
    Ok(HyperplaneReport {
        layer,
        previous_relu: previous,
        rows,
    })
}

/// Synthesis columns of a decoder segment kept by the pattern of ReLU `l`.
#[derive(Clone, Debug, Serialize)]
pub struct DecoderSubset {
    pub layer: usize,
    /// Layers `l+1 ..` up to the next ReLU (exclusive) or the output.
    pub segment: Range<usize>,
    pub selected: Vec<usize>,
    pub total: usize,
    pub ratio: f64,
    /// `‖(DΛ)ξ̃ − Dσ(ξ̃)‖ / ‖Dσ(ξ̃)‖`.
    pub masking_error: f64,
    /// Relative error of `D[:, selected] ξ̃[selected] + D_s s + b` against the
    /// segment output of the forward pass.
    pub reconstruction_error: f64,
    /// Shape of the skip block `D_s` when a skip emitted outside the segment
    /// joins inside it.
    pub skip_columns: Option<usize>,
    #[serde(skip)]
    pub synthesis: DMatrix<f64>,
    #[serde(skip)]
    pub skip_synthesis: Option<DMatrix<f64>>,
}

pub fn decoder_frame_subset(
    net: &Network,
    params: &[f64],
    z: &Features,
    layer: usize,
    cap: usize,
) -> Result<DecoderSubset> {
    relu_layer(net, layer)?;
    let (pass, skips) = full_pass(net, params, z)?;
    let n = net.spec.len();
    let end = (layer + 1..n).find(|&i| net.spec.layers[i].is_relu()).unwrap_or(n);
    let segment = layer + 1..end;
    let record = pass.trace.record(layer).expect("recorded");
    let xi = &record.pre;
    let sigma = &pass.inputs.get(layer + 1).cloned().unwrap_or_else(|| pass.output.clone());
    let target = pass.inputs.get(end).cloned().unwrap_or_else(|| pass.output.clone());

    let (d, bias) = segment_affine(net, params, segment.clone(), xi.shape(), &skips, cap)?;
    let lambda_xi: Vec<f64> = xi.data.iter().zip(&record.active).map(|(&v, &a)| if a { v } else { 0.0 }).collect();
    let masked = &d * DVector::from_vec(lambda_xi);
    let plain = &d * DVector::from_column_slice(&sigma.data);
    let masking_error = relative(&masked, &plain);

    // skips joined in the segment but emitted before it
    let joined: Vec<String> = net.spec.layers[segment.clone()]
        .iter()
        .filter_map(|l| match l {
            LayerKind::SkipJoin { tag, .. } => Some(tag.clone()),
            _ => None,
        })
        .filter(|t| {
            !net.spec.layers[segment.clone()]
                .iter()
                .any(|l| matches!(l, LayerKind::SkipEmit { tag } if tag == t))
        })
        .collect();
    let skip_synthesis = if joined.is_empty() {
        None
    } else {
        let zero = xi.zeros_like();
        let base = zeroed(&skips);
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for tag in &joined {
            let s = &skips[tag];
            super::dense::check_cap(s.len(), cap)?;
            for j in 0..s.len() {
                let mut st = base.clone();
                st.insert(tag.clone(), super::dense::unit(s.shape(), j));
                cols.push(net.run(params, segment.clone(), &zero, &mut st, RunOptions::linear().without_bias())?.output.data);
            }
        }
        Some(DMatrix::from_fn(d.nrows(), cols.len(), |r, c| cols[c][r]))
    };

    let selected: Vec<usize> = (0..record.active.len()).filter(|&i| record.active[i]).collect();
    let mut recon = DVector::zeros(d.nrows());
    for &i in &selected {
        recon.axpy(xi.data[i], &d.column(i), 1.0);
    }
    // the offset already contains D_s s for the actual skips; add it explicitly
    // from the skip block when present to check the augmented frame
    let zero_skip_bias = {
        let zero = xi.zeros_like();
        let mut st = zeroed(&skips);
        DVector::from_vec(net.run(params, segment.clone(), &zero, &mut st, RunOptions::linear())?.output.data)
    };
    if let Some(ds) = &skip_synthesis {
        let s: Vec<f64> = joined.iter().flat_map(|t| skips[t].data.iter().copied()).collect();
        recon += ds * DVector::from_vec(s);
        recon += &zero_skip_bias;
    } else {
        recon += &bias;
    }
    let reconstruction_error = relative(&recon, &DVector::from_column_slice(&target.data));
    let total = record.active.len();
    Ok(DecoderSubset {
        layer,
        segment,
        ratio: selected.len() as f64 / total as f64,
        total,
        selected,
        masking_error,
        reconstruction_error,
        skip_columns: skip_synthesis.as_ref().map(|m| m.ncols()),
        synthesis: d,
        skip_synthesis,
    })
}

fn relative(a: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    let diff = (a - reference).norm();
    let n = reference.norm();
    if n == 0.0 {
        diff
    } else {
        diff / n
    }
}
