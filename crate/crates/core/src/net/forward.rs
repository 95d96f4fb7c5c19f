use std::collections::BTreeMap;
use std::ops::Range;

use super::layers::{avg_pool, avg_pool_adjoint, haar_pool, haar_unpool, zero_insert, zero_insert_adjoint};
use super::{JoinMode, LayerKind, LayerParams, NetworkSpec, ParamLayout};
use crate::error::{ensure, Error, Result};
use crate::tensor::{conv_backward, conv_forward, Features, Seed};

/// Skip signals keyed by tag.
pub type SkipStore = BTreeMap<String, Features>;

const BN_EPS: f64 = 1e-5;

/// How ReLU layers act during a run.
#[derive(Clone, Copy, Debug)]
pub enum ReluMode<'a> {
    /// `max(x, 0)`, pattern `x > 0` (ties inactive).
    Relu,
    /// Linear mode: every ReLU is the identity.
    Identity,
    /// Multiply by the patterns recorded in a trace (matched by layer index).
    Fixed(&'a ActivationTrace),
}

#[derive(Clone, Copy, Debug)]
pub struct RunOptions<'a> {
    pub relu: ReluMode<'a>,
    /// When false, convolution biases and normalization shifts are skipped.
    pub bias: bool,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        Self {
            relu: ReluMode::Relu,
            bias: true,
        }
    }
}

impl<'a> RunOptions<'a> {
    pub fn linear() -> Self {
        Self {
            relu: ReluMode::Identity,
            bias: true,
        }
    }

    pub fn fixed(trace: &'a ActivationTrace) -> Self {
        Self {
            relu: ReluMode::Fixed(trace),
            bias: true,
        }
    }

    pub fn without_bias(self) -> Self {
        Self { bias: false, ..self }
    }
}

/// Pre-activation values and the on/off pattern applied at one ReLU layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ReluRecord {
    pub layer: usize,
    pub pre: Features,
    pub active: Vec<bool>,
}

/// ReLU patterns of one pass, ordered by layer index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActivationTrace {
    pub records: Vec<ReluRecord>,
}

impl ActivationTrace {
    pub fn record(&self, layer: usize) -> Option<&ReluRecord> {
        self.records
            .binary_search_by_key(&layer, |r| r.layer)
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn n_neurons(&self) -> usize {
        self.records.iter().map(|r| r.active.len()).sum()
    }

    /// All patterns packed LSB-first into 64-bit words.
    pub fn fingerprint(&self) -> Vec<u64> {
        let mut words = vec![0u64; self.n_neurons().div_ceil(64)];
        let bits = self.records.iter().flat_map(|r| r.active.iter());
        for (i, &b) in bits.enumerate() {
            if b {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        words
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.records.len() == other.records.len()
            && self
                .records
                .iter()
                .zip(&other.records)
                .all(|(a, b)| a.layer == b.layer && a.active == b.active)
    }

    /// Records of the layers inside `range`.
    pub fn restricted(&self, range: Range<usize>) -> ActivationTrace {
        ActivationTrace {
            records: self.records.iter().filter(|r| range.contains(&r.layer)).cloned().collect(),
        }
    }
}

#[derive(Clone, Debug)]
struct NormCache {
    normalized: Features,
    inv_std: Vec<f64>,
}

/// Everything a run produced, including what [`Network::backward`] needs.
#[derive(Clone, Debug)]
pub struct Pass {
    pub range: Range<usize>,
    pub output: Features,
    pub trace: ActivationTrace,
    /// Input of every layer in `range`.
    pub inputs: Vec<Features>,
    masks: Vec<Option<Vec<bool>>>,
    norms: Vec<Option<NormCache>>,
    bias: bool,
}

/// A [`NetworkSpec`] with its parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub layout: ParamLayout,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let layout = ParamLayout::new(&spec)?;
        Ok(Self { spec, layout })
    }

    pub fn n_params(&self) -> usize {
        self.layout.len
    }

    pub fn init(&self, seed: Seed) -> Vec<f64> {
        self.layout.init(seed)
    }

    /// Full forward pass; fails on non-finite output.
    pub fn forward(&self, params: &[f64], z: &Features, opts: RunOptions) -> Result<Pass> {
        let mut skips = SkipStore::new();
        let pass = self.run(params, 0..self.spec.layers.len(), z, &mut skips, opts)?;
        ensure!(pass.output.is_finite(), NonFinite, "network output diverged");
        Ok(pass)
    }

    pub fn output(&self, params: &[f64], z: &Features) -> Result<Features> {
        Ok(self.forward(params, z, RunOptions::default())?.output)
    }

    /// Runs `layers[range]`. Emitted skips are inserted into `skips`; joins read
    /// from it, so a decoder range can be driven with externally supplied skips.
    pub fn run(
        &self,
        params: &[f64],
        range: Range<usize>,
        input: &Features,
        skips: &mut SkipStore,
        opts: RunOptions,
    ) -> Result<Pass> {
        ensure!(
            params.len() == self.layout.len,
            Shape,
            "expected {} parameters, got {}",
            self.layout.len,
            params.len()
        );
        ensure!(range.end <= self.spec.layers.len(), Shape, "layer range {range:?} out of bounds");
        let plan = self.spec.channel_plan()?;
        let expect_c = if range.start < plan.len() {
            plan[range.start].input
        } else if range.start == 0 {
            self.spec.input_channels
        } else {
            plan[range.start - 1].output
        };
        ensure!(
            input.channels == expect_c,
            Shape,
            "layer {} expects {expect_c} channels, got {}",
            range.start,
            input.channels
        );
        let n = range.len();
        let mut inputs = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        let mut norms = Vec::with_capacity(n);
        let mut trace = ActivationTrace::default();
        let mut x = input.clone();
        for i in range.clone() {
            let mut mask = None;
            let mut norm = None;
            let y = match (&self.spec.layers[i], &self.layout.layers[i]) {
                (LayerKind::Conv { .. }, LayerParams::Conv { shape, weight, bias }) => conv_forward(
                    &x,
                    shape,
                    &params[weight.clone()],
                    bias.as_ref().filter(|_| opts.bias).map(|b| &params[b.clone()]),
                )?,
                (LayerKind::UnpoolDeconv { factor, .. }, LayerParams::Conv { shape, weight, bias }) => {
                    let t = conv_forward(
                        &x,
                        shape,
                        &params[weight.clone()],
                        bias.as_ref().filter(|_| opts.bias).map(|b| &params[b.clone()]),
                    )?;
                    zero_insert(&t, *factor)
                }
                (LayerKind::Relu, _) => {
                    let active: Vec<bool> = match opts.relu {
                        ReluMode::Relu => x.data.iter().map(|&v| v > 0.0).collect(),
                        ReluMode::Identity => vec![true; x.len()],
                        ReluMode::Fixed(t) => {
                            let r = t
                                .record(i)
                                .ok_or_else(|| Error::InvalidArgument(format!("no recorded pattern for layer {i}")))?;
                            ensure!(r.active.len() == x.len(), Shape, "recorded pattern size at layer {i}");
                            r.active.clone()
                        }
                    };
                    let mut y = x.clone();
                    for (v, &a) in y.data.iter_mut().zip(&active) {
                        if !a {
                            *v = 0.0;
                        }
                    }
                    trace.records.push(ReluRecord {
                        layer: i,
                        pre: x.clone(),
                        active: active.clone(),
                    });
                    mask = Some(active);
                    y
                }
                (LayerKind::AvgPool { factor }, _) => {
                    ensure!(
                        x.height % factor[0] == 0 && x.width % factor[1] == 0,
                        Shape,
                        "layer {i}: pooling {factor:?} of {}x{}",
                        x.height,
                        x.width
                    );
                    avg_pool(&x, *factor)
                }
                (LayerKind::HaarPool { factor, gain }, _) => {
                    ensure!(
                        x.height % factor[0] == 0 && x.width % factor[1] == 0,
                        Shape,
                        "layer {i}: pooling {factor:?} of {}x{}",
                        x.height,
                        x.width
                    );
                    haar_pool(&x, *factor, *gain)
                }
                (LayerKind::HaarUnpool { factor, gain }, _) => haar_unpool(&x, *factor, *gain),
                (LayerKind::SkipEmit { tag }, _) => {
                    skips.insert(tag.clone(), x.clone());
                    x.clone()
                }
                (LayerKind::SkipJoin { tag, mode }, _) => {
                    let s = skips
                        .get(tag)
                        .ok_or_else(|| Error::InvalidArgument(format!("skip `{tag}` not available at layer {i}")))?;
                    ensure!(
                        s.height == x.height && s.width == x.width,
                        Shape,
                        "layer {i}: skip `{tag}` extent mismatch"
                    );
                    match mode {
                        JoinMode::Add => {
                            ensure!(s.channels == x.channels, Shape, "layer {i}: add-join channel mismatch");
                            let mut y = x.clone();
                            y.add_assign(s);
                            y
                        }
                        JoinMode::Concat => Features::concat(&[&x, s])?,
                    }
                }
                (LayerKind::AffineBn, LayerParams::Affine { scale, shift }) => {
                    affine(&x, &params[scale.clone()], opts.bias.then(|| &params[shift.clone()]))
                }
                (LayerKind::BatchNorm, LayerParams::Affine { scale, shift }) => {
                    let (normalized, inv_std) = instance_normalize(&x);
                    let y = affine(&normalized, &params[scale.clone()], opts.bias.then(|| &params[shift.clone()]));
                    norm = Some(NormCache { normalized, inv_std });
                    y
                }
                (kind, _) => return Err(Error::Shape(format!("layer {i} ({kind}) has no parameter slots"))),
            };
            inputs.push(std::mem::replace(&mut x, y));
            masks.push(mask);
            norms.push(norm);
        }
        Ok(Pass {
            range,
            output: x,
            trace,
            inputs,
            masks,
            norms,
            bias: opts.bias,
        })
    }

    /// Reverse sweep over `pass.range`: accumulates parameter gradients into
    /// `grads` and returns the gradient with respect to the run's input.
    pub fn backward(&self, params: &[f64], pass: &Pass, upstream: &Features, grads: &mut [f64]) -> Result<Features> {
        let mut skip_grads = SkipStore::new();
        self.backward_with_skips(params, pass, upstream, grads, &mut skip_grads)
    }

    /// As [`Network::backward`]; gradients of skips joined inside the range but
    /// emitted before it are left in `skip_grads`, and gradients already present
    /// there for skips emitted inside the range are consumed.
    pub fn backward_with_skips(
        &self,
        params: &[f64],
        pass: &Pass,
        upstream: &Features,
        grads: &mut [f64],
        skip_grads: &mut SkipStore,
    ) -> Result<Features> {
        ensure!(grads.len() == self.layout.len, Shape, "gradient buffer length");
        ensure!(
            upstream.shape() == pass.output.shape(),
            Shape,
            "upstream gradient {:?} vs output {:?}",
            upstream.shape(),
            pass.output.shape()
        );
        let plan = self.spec.channel_plan()?;
        let mut g = upstream.clone();
        for i in pass.range.clone().rev() {
            let k = i - pass.range.start;
            let x = &pass.inputs[k];
            g = match (&self.spec.layers[i], &self.layout.layers[i]) {
                (LayerKind::Conv { .. }, LayerParams::Conv { shape, weight, bias }) => {
                    let mut gin = x.zeros_like();
                    let (gw, gb) = split_grads(grads, weight, bias.as_ref().filter(|_| pass.bias));
                    conv_backward(x, shape, &params[weight.clone()], &g, gw, gb, Some(&mut gin))?;
                    gin
                }
                (LayerKind::UnpoolDeconv { factor, .. }, LayerParams::Conv { shape, weight, bias }) => {
                    let gt = zero_insert_adjoint(&g, *factor);
                    let mut gin = x.zeros_like();
                    let (gw, gb) = split_grads(grads, weight, bias.as_ref().filter(|_| pass.bias));
                    conv_backward(x, shape, &params[weight.clone()], &gt, gw, gb, Some(&mut gin))?;
                    gin
                }
                (LayerKind::Relu, _) => {
                    let mask = pass.masks[k].as_ref().expect("relu mask recorded");
                    let mut gin = g;
                    for (v, &a) in gin.data.iter_mut().zip(mask) {
                        if !a {
                            *v = 0.0;
                        }
                    }
                    gin
                }
                (LayerKind::AvgPool { factor }, _) => avg_pool_adjoint(&g, *factor),
                (LayerKind::HaarPool { factor, gain }, _) => haar_unpool(&g, *factor, *gain),
                (LayerKind::HaarUnpool { factor, gain }, _) => haar_pool(&g, *factor, *gain),
                (LayerKind::SkipEmit { tag }, _) => {
                    let mut gin = g;
                    if let Some(s) = skip_grads.remove(tag) {
                        gin.add_assign(&s);
                    }
                    gin
                }
                (LayerKind::SkipJoin { tag, mode }, _) => {
                    let (main, skip) = match mode {
                        JoinMode::Add => (g.clone(), g),
                        JoinMode::Concat => {
                            let mut parts = g.split(&[plan[i].input, plan[i].skip]).into_iter();
                            (parts.next().unwrap(), parts.next().unwrap())
                        }
                    };
                    match skip_grads.get_mut(tag) {
                        Some(acc) => acc.add_assign(&skip),
                        None => {
                            skip_grads.insert(tag.clone(), skip);
                        }
                    }
                    main
                }
                (LayerKind::AffineBn, LayerParams::Affine { scale, shift }) => {
                    let gamma = &params[scale.clone()];
                    let n = x.plane_len();
                    let mut gin = g.clone();
                    for c in 0..x.channels {
                        let (gc, xc) = (g.channel(c), x.channel(c));
                        grads[scale.start + c] += gc.iter().zip(xc).map(|(a, b)| a * b).sum::<f64>();
                        if pass.bias {
                            grads[shift.start + c] += gc.iter().sum::<f64>();
                        }
                        for v in &mut gin.data[c * n..(c + 1) * n] {
                            *v *= gamma[c];
                        }
                    }
                    gin
                }
                (LayerKind::BatchNorm, LayerParams::Affine { scale, shift }) => {
                    let cache = pass.norms[k].as_ref().expect("normalization cache");
                    let gamma = &params[scale.clone()];
                    let n = x.plane_len();
                    let nf = n as f64;
                    let mut gin = x.zeros_like();
                    for c in 0..x.channels {
                        let (gc, xh) = (g.channel(c), cache.normalized.channel(c));
                        let sum_g: f64 = gc.iter().sum();
                        let sum_gx: f64 = gc.iter().zip(xh).map(|(a, b)| a * b).sum();
                        grads[scale.start + c] += sum_gx;
                        if pass.bias {
                            grads[shift.start + c] += sum_g;
                        }
                        let s = gamma[c] * cache.inv_std[c] / nf;
                        for (j, v) in gin.channel_mut(c).iter_mut().enumerate() {
                            *v = s * (nf * gc[j] - sum_g - xh[j] * sum_gx);
                        }
                    }
                    gin
                }
                (kind, _) => return Err(Error::Shape(format!("layer {i} ({kind}) has no parameter slots"))),
            };
        }
        Ok(g)
    }
}

fn split_grads<'g>(
    grads: &'g mut [f64],
    weight: &Range<usize>,
    bias: Option<&Range<usize>>,
) -> (&'g mut [f64], Option<&'g mut [f64]>) {
    // weight and bias slots are adjacent, weight first
    let (head, tail) = grads.split_at_mut(weight.end);
    let gw = &mut head[weight.clone()];
    let gb = bias.map(|b| &mut tail[b.start - weight.end..b.end - weight.end]);
    (gw, gb)
}

fn affine(x: &Features, scale: &[f64], shift: Option<&[f64]>) -> Features {
    let mut y = x.clone();
    let n = x.plane_len();
    for c in 0..x.channels {
        let b = shift.map_or(0.0, |s| s[c]);
        for v in &mut y.data[c * n..(c + 1) * n] {
            *v = scale[c] * *v + b;
        }
    }
    y
}

fn instance_normalize(x: &Features) -> (Features, Vec<f64>) {
    let n = x.plane_len() as f64;
    let mut y = x.clone();
    let mut inv = Vec::with_capacity(x.channels);
    for c in 0..x.channels {
        let ch = x.channel(c);
        let mean = ch.iter().sum::<f64>() / n;
        let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let s = 1.0 / (var + BN_EPS).sqrt();
        for (o, v) in y.channel_mut(c).iter_mut().zip(ch) {
            *o = (v - mean) * s;
        }
        inv.push(s);
    }
    (y, inv)
}
