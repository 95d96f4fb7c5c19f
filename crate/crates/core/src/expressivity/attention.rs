use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensor::{conv_backward, conv_forward, ConvShape, Features, Seed};

/// Hidden width of the attention MLP.
pub const MLP_HIDDEN: usize = 64;

/// What the attention MLP pools from each branch output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapMode {
    /// Mean of the coil-wise complex magnitude.
    #[default]
    Magnitude,
    /// Mean of the raw real channels.
    Channels,
}

/// Global average pool of one branch output (`[re…, im…]` channel layout).
pub fn global_pool(x: &Features, mode: GapMode) -> f64 {
    let n = x.len() as f64;
    match mode {
        GapMode::Channels => x.data.iter().sum::<f64>() / n,
        GapMode::Magnitude => {
            let half = x.len() / 2;
            let s: f64 = (0..half).map(|i| x.data[i].hypot(x.data[half + i])).sum();
            s / half as f64
        }
    }
}

/// Gradient of [`global_pool`] scaled by `g`, added into `out`.
pub fn global_pool_backward(x: &Features, mode: GapMode, g: f64, out: &mut Features) {
    match mode {
        GapMode::Channels => {
            let s = g / x.len() as f64;
            out.data.iter_mut().for_each(|v| *v += s);
        }
        GapMode::Magnitude => {
            let half = x.len() / 2;
            let s = g / half as f64;
            for i in 0..half {
                let (re, im) = (x.data[i], x.data[half + i]);
                let m = re.hypot(im);
                if m > 0.0 {
                    out.data[i] += s * re / m;
                    out.data[half + i] += s * im / m;
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Parameter layout of the `N → 64 → N` attention MLP:
/// `W₁ [64×N] | b₁ [64] | W₂ [N×64] | b₂ [N]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionMlp {
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpCache {
    pub input: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub weights: Vec<f64>,
}

impl AttentionMlp {
    pub fn n_params(&self) -> usize {
        2 * MLP_HIDDEN * self.n + MLP_HIDDEN + self.n
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = w1 + MLP_HIDDEN * self.n;
        let w2 = b1 + MLP_HIDDEN;
        let b2 = w2 + self.n * MLP_HIDDEN;
        [w1, b1, w2, b2]
    }

    /// Uniform fan-in init for `W₁`, small `W₂`, and output biases at
    /// `logit(min(1/N, 0.9))` so the initial weights sit near `1/N`.
    pub fn init(&self, seed: Seed) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params()];
        let [w1, b1, w2, b2] = self.offsets();
        let mut rng = seed.rng();
        let a1 = (6.0 / self.n as f64).sqrt();
        for v in &mut p[w1..b1] {
            *v = rng.random_range(-a1..a1);
        }
        let a2 = 0.1 * (6.0 / MLP_HIDDEN as f64).sqrt();
        for v in &mut p[w2..b2] {
            *v = rng.random_range(-a2..a2);
        }
        let target = (1.0 / self.n as f64).min(0.9);
        let logit = (target / (1.0 - target)).ln();
        p[b2..].fill(logit);
        p
    }

    pub fn forward(&self, params: &[f64], g: &[f64]) -> Result<MlpCache> {
        ensure!(params.len() == self.n_params(), Shape, "attention MLP expects {} parameters", self.n_params());
        ensure!(g.len() == self.n, Shape, "attention MLP expects {} inputs, got {}", self.n, g.len());
        let [w1, b1, w2, b2] = self.offsets();
        let hidden_pre: Vec<f64> = (0..MLP_HIDDEN)
            .map(|h| params[b1 + h] + (0..self.n).map(|k| params[w1 + h * self.n + k] * g[k]).sum::<f64>())
            .collect();
        let hidden: Vec<f64> = hidden_pre.iter().map(|&v| v.max(0.0)).collect();
        let logits: Vec<f64> = (0..self.n)
            .map(|k| params[b2 + k] + (0..MLP_HIDDEN).map(|h| params[w2 + k * MLP_HIDDEN + h] * hidden[h]).sum::<f64>())
            .collect();
        let weights = logits.iter().map(|&a| sigmoid(a)).collect();
        Ok(MlpCache {
            input: g.to_vec(),
            hidden_pre,
            hidden,
            logits,
            weights,
        })
    }

    /// Accumulates parameter gradients from `dw = ∂L/∂w` and returns `∂L/∂g`.
    pub fn backward(&self, params: &[f64], cache: &MlpCache, dw: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let [w1, b1, w2, b2] = self.offsets();
        let da: Vec<f64> = dw.iter().zip(&cache.weights).map(|(d, w)| d * w * (1.0 - w)).collect();
        let mut dh = vec![0.0; MLP_HIDDEN];
        for k in 0..self.n {
            grads[b2 + k] += da[k];
            for h in 0..MLP_HIDDEN {
                grads[w2 + k * MLP_HIDDEN + h] += da[k] * cache.hidden[h];
                dh[h] += da[k] * params[w2 + k * MLP_HIDDEN + h];
            }
        }
        let mut dg = vec![0.0; self.n];
        for h in 0..MLP_HIDDEN {
            if cache.hidden_pre[h] <= 0.0 {
                continue;
            }
            grads[b1 + h] += dh[h];
            for k in 0..self.n {
                grads[w1 + h * self.n + k] += dh[h] * cache.input[k];
                dg[k] += dh[h] * params[w1 + h * self.n + k];
            }
        }
        dg
    }

    /// Hidden-unit on/off pattern.
    pub fn pattern(cache: &MlpCache) -> Vec<bool> {
        cache.hidden_pre.iter().map(|&v| v > 0.0).collect()
    }
}

/// Attention weights `w(z) ∈ (0,1)ᴺ` from `N` branch outputs.
pub fn attention_mlp_weights(params: &[f64], branch_outputs: &[Features], mode: GapMode) -> Result<Vec<f64>> {
    ensure!(!branch_outputs.is_empty(), InvalidArgument, "no branch outputs");
    let shape = branch_outputs[0].shape();
    ensure!(
        branch_outputs.iter().all(|b| b.shape() == shape),
        Shape,
        "branch outputs differ in shape"
    );
    let g: Vec<f64> = branch_outputs.iter().map(|b| global_pool(b, mode)).collect();
    let mlp = AttentionMlp { n: branch_outputs.len() };
    Ok(mlp.forward(params, &g)?.weights)
}

/// `1×1` convolution over `n` concatenated `channels`-channel candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConv1x1 {
    pub n: usize,
    pub channels: usize,
}

/// Starting point of the mixing convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixInit {
    /// Identity on every block: the plain sum of all candidates.
    Sum,
    /// Identity on the first block only.
    First,
    /// `I/N` on every block.
    Mean,
}

impl AttentionConv1x1 {
    pub fn shape(&self) -> ConvShape {
        ConvShape {
            q_out: self.channels,
            q_in: self.n * self.channels,
            kernel: [1, 1],
        }
    }

    pub fn n_params(&self) -> usize {
        self.shape().weight_len() + self.channels
    }

    pub fn init(&self, how: MixInit) -> Vec<f64> {
        let shape = self.shape();
        let mut p = vec![0.0; self.n_params()];
        for b in 0..self.n {
            let v = match how {
                MixInit::Sum => 1.0,
                MixInit::First if b == 0 => 1.0,
                MixInit::First => 0.0,
                MixInit::Mean => 1.0 / self.n as f64,
            };
            for c in 0..self.channels {
                p[shape.index(c, b * self.channels + c, 0, 0)] = v;
            }
        }
        p
    }

    pub fn forward(&self, params: &[f64], concat: &Features) -> Result<Features> {
        let shape = self.shape();
        let (w, b) = params.split_at(shape.weight_len());
        conv_forward(concat, &shape, w, Some(b))
    }

    /// Accumulates parameter gradients; returns the gradient of the concatenation.
    pub fn backward(&self, params: &[f64], concat: &Features, upstream: &Features, grads: &mut [f64]) -> Result<Features> {
        let shape = self.shape();
        let (w, _) = params.split_at(shape.weight_len());
        let (gw, gb) = grads.split_at_mut(shape.weight_len());
        let mut gin = concat.zeros_like();
        conv_backward(concat, &shape, w, upstream, gw, Some(gb), Some(&mut gin))?;
        Ok(gin)
    }

    /// Channel-mixing matrix of block `b` (`channels × channels`).
    pub fn block(&self, params: &[f64], b: usize) -> nalgebra::DMatrix<f64> {
        let shape = self.shape();
        nalgebra::DMatrix::from_fn(self.channels, self.channels, |o, i| {
            params[shape.index(o, b * self.channels + i, 0, 0)]
        })
    }

    pub fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.shape().weight_len()..]
    }
}
