use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LayerKind, NetworkSpec};
use crate::error::{ensure, Error, Result};
use crate::tensor::{read_ctns_file, write_ctns_file, ComplexTensor, ConvShape, Seed};

/// Parameter slices owned by one layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerParams {
    None,
    Conv {
        shape: ConvShape,
        weight: Range<usize>,
        bias: Option<Range<usize>>,
    },
    /// Per-channel scale and shift (affine or instance normalization).
    Affine { scale: Range<usize>, shift: Range<usize> },
}

/// Named slice of the flat parameter vector, as written to checkpoints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub layer: usize,
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub fan_in: usize,
}

/// Flat parameter layout of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    pub layers: Vec<LayerParams>,
    pub slots: Vec<ParamSlot>,
    pub len: usize,
}

impl ParamLayout {
    pub fn new(spec: &NetworkSpec) -> Result<Self> {
        let plan = spec.channel_plan()?;
        let mut offset = 0;
        let mut slots = Vec::new();
        let mut take = |layer: usize, name: &str, len: usize, fan_in: usize| {
            let r = offset..offset + len;
            slots.push(ParamSlot {
                layer,
                name: name.into(),
                offset,
                len,
                fan_in,
            });
            offset += len;
            r
        };
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, (kind, step)) in spec.layers.iter().zip(&plan).enumerate() {
            layers.push(match kind {
                LayerKind::Conv { kernel, out, bias } | LayerKind::UnpoolDeconv { kernel, out, bias, .. } => {
                    let shape = ConvShape {
                        q_out: *out,
                        q_in: step.input,
                        kernel: *kernel,
                    };
                    let fan_in = step.input * kernel[0] * kernel[1];
                    let weight = take(i, "weight", shape.weight_len(), fan_in);
                    let bias = bias.then(|| take(i, "bias", *out, fan_in));
                    LayerParams::Conv { shape, weight, bias }
                }
                LayerKind::AffineBn | LayerKind::BatchNorm => LayerParams::Affine {
                    scale: take(i, "scale", step.input, 1),
                    shift: take(i, "shift", step.input, 1),
                },
                _ => LayerParams::None,
            });
        }
        Ok(Self {
            layers,
            slots,
            len: offset,
        })
    }

    /// Fan-in-scaled uniform weights `±√(6/fan_in)`, zero biases and shifts,
    /// unit scales.
    pub fn init(&self, seed: Seed) -> Vec<f64> {
        let mut rng = seed.rng();
        let mut values = vec![0.0; self.len];
        for slot in &self.slots {
            let dst = &mut values[slot.offset..slot.offset + slot.len];
            match slot.name.as_str() {
                "weight" => {
                    let bound = (6.0 / slot.fan_in as f64).sqrt();
                    for v in dst {
                        *v = rng.random_range(-bound..bound);
                    }
                }
                "scale" => dst.fill(1.0),
                _ => {}
            }
        }
        values
    }
}

/// Parameter values with a gradient buffer of identical layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
}

impl ParamStore {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
            grads: vec![0.0; len],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        let grads = vec![0.0; values.len()];
        Self { values, grads }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grads(&mut self) {
        self.grads.fill(0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    n_params: usize,
    slots: Vec<ParamSlot>,
    /// Free-form blocks appended after the network parameters (attention nets).
    extra: Vec<(String, usize)>,
}

/// Writes `params.ctns` (values as a rank-1 tensor with zero imaginary parts),
/// `layout.json` and `network.txt` into `dir`.
pub fn save_checkpoint(dir: &Path, spec: &NetworkSpec, values: &[f64], extra: &[(String, usize)]) -> Result<()> {
    let layout = ParamLayout::new(spec)?;
    let extra_len: usize = extra.iter().map(|e| e.1).sum();
    ensure!(
        values.len() == layout.len + extra_len,
        Shape,
        "checkpoint has {} values, layout expects {}",
        values.len(),
        layout.len + extra_len
    );
    std::fs::create_dir_all(dir)?;
    let t = ComplexTensor::from_real(vec![values.len().max(1)], if values.is_empty() { &[0.0] } else { values })?;
    write_ctns_file(dir.join("params.ctns"), &t)?;
    let manifest = Manifest {
        n_params: values.len(),
        slots: layout.slots,
        extra: extra.to_vec(),
    };
    std::fs::write(dir.join("layout.json"), serde_json::to_string_pretty(&manifest)?)?;
    std::fs::write(dir.join("network.txt"), spec.to_string())?;
    Ok(())
}

/// Loaded checkpoint: spec, flat values and extra block sizes.
pub fn load_checkpoint(dir: &Path) -> Result<(NetworkSpec, Vec<f64>, Vec<(String, usize)>)> {
    let spec: NetworkSpec = std::fs::read_to_string(dir.join("network.txt"))?.parse()?;
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("layout.json"))?)?;
    let layout = ParamLayout::new(&spec)?;
    if manifest.slots != layout.slots {
        return Err(Error::Format("checkpoint layout does not match network".into()));
    }
    let t = read_ctns_file(dir.join("params.ctns"))?;
    let mut values: Vec<f64> = t.data().iter().map(|v| v.re).collect();
    values.truncate(manifest.n_params);
    ensure!(values.len() == manifest.n_params, Format, "truncated parameter file");
    ensure!(values.iter().all(|v| v.is_finite()), NonFinite, "checkpoint parameters");
    Ok((spec, values, manifest.extra))
}
