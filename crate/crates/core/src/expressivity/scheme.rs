use serde::{Deserialize, Serialize};

use super::attention::{global_pool, global_pool_backward, AttentionConv1x1, AttentionMlp, GapMode, MixInit, MlpCache};
use crate::error::{ensure, Error, Result};
use crate::net::{Network, Pass, RunOptions};
use crate::tensor::{Features, Seed};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SchemeKind {
    /// `v = z + U(z)`.
    Baseline,
    /// `v = Σₙ wₙ T(M⁽ⁿ⁾z)` over `n` random sub-masks keeping `keep_ratio`
    /// of the non-ACS samples.
    Bootstrap { n: usize, keep_ratio: f64 },
    /// Attention over `[z, U(z)]`.
    Residual,
    /// Attention over `[T(z), T²(z), …, Tⁿ(z)]`.
    Iterative { n: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    /// Sigmoid-weighted sum driven by an MLP on pooled candidates.
    #[default]
    Mlp,
    /// `1×1` convolution over the concatenated candidates.
    Conv1x1,
    /// Fixed `1/N` average (ablation).
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub attention: AttentionKind,
    pub pooling: GapMode,
}

impl SchemeConfig {
    pub fn baseline() -> Self {
        Self {
            kind: SchemeKind::Baseline,
            attention: AttentionKind::Mlp,
            pooling: GapMode::Magnitude,
        }
    }

    /// Default attention per scheme: MLP for bootstrap, `1×1` convolution for
    /// the residual and iterative schemes.
    pub fn with_default_attention(kind: SchemeKind) -> Self {
        let attention = match kind {
            SchemeKind::Residual | SchemeKind::Iterative { .. } => AttentionKind::Conv1x1,
            _ => AttentionKind::Mlp,
        };
        Self {
            kind,
            attention,
            pooling: GapMode::Magnitude,
        }
    }

    /// Number of candidates fed to the attention head.
    pub fn n_candidates(&self) -> usize {
        match self.kind {
            SchemeKind::Baseline => 1,
            SchemeKind::Bootstrap { n, .. } | SchemeKind::Iterative { n } => n,
            SchemeKind::Residual => 2,
        }
    }

    /// Number of masked inputs a sample must carry.
    pub fn n_branch_inputs(&self) -> usize {
        match self.kind {
            SchemeKind::Bootstrap { n, .. } => n,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SchemeKind::Bootstrap { n, keep_ratio } => {
                ensure!(n >= 1, Config, "bootstrap needs at least one branch");
                ensure!(keep_ratio > 0.0 && keep_ratio <= 1.0, Config, "keep_ratio must be in (0, 1]");
            }
            SchemeKind::Iterative { n } => ensure!(n >= 1, Config, "iterative scheme needs n ≥ 1"),
            SchemeKind::Residual if self.attention == AttentionKind::Uniform => {
                return Err(Error::Config("uniform attention is only defined for bootstrap".into()))
            }
            _ => {}
        }
        if matches!(self.kind, SchemeKind::Iterative { .. }) && self.attention == AttentionKind::Uniform {
            return Err(Error::Config("uniform attention is only defined for bootstrap".into()));
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            SchemeKind::Baseline => "baseline",
            SchemeKind::Bootstrap { .. } => "bootstrap",
            SchemeKind::Residual => "residual",
            SchemeKind::Iterative { .. } => "iterative",
        }
    }
}

/// Input of one system evaluation: the network input and, for bootstrap, the
/// sub-masked inputs in mask-generation order.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemInput {
    pub z: Features,
    pub branches: Vec<Features>,
}

impl SystemInput {
    pub fn plain(z: Features) -> Self {
        Self { z, branches: Vec::new() }
    }
}

#[derive(Clone, Debug)]
enum Head {
    Identity,
    Uniform,
    Mlp(AttentionMlp),
    Conv(AttentionConv1x1),
}

#[derive(Clone, Debug)]
pub enum HeadCache {
    Identity,
    Uniform,
    Mlp { pooled: Vec<f64>, cache: MlpCache },
    Conv { concat: Features },
}

/// Everything one system evaluation produced.
#[derive(Clone, Debug)]
pub struct SystemPass {
    pub output: Features,
    /// Inputs of the attention head.
    pub candidates: Vec<Features>,
    /// One pass of `U` per application, in evaluation order.
    pub base_passes: Vec<Pass>,
    pub head: HeadCache,
}

impl SystemPass {
    /// Scalar aggregation weights, when the head has them.
    pub fn weights(&self) -> Option<Vec<f64>> {
        match &self.head {
            HeadCache::Mlp { cache, .. } => Some(cache.weights.clone()),
            HeadCache::Uniform => Some(vec![1.0 / self.candidates.len() as f64; self.candidates.len()]),
            HeadCache::Identity => Some(vec![1.0]),
            HeadCache::Conv { .. } => None,
        }
    }

    /// Every ReLU pattern of the pass: each base application in order, then
    /// the attention MLP hidden layer.
    pub fn pattern(&self) -> Vec<bool> {
        let mut bits: Vec<bool> = self
            .base_passes
            .iter()
            .flat_map(|p| p.trace.records.iter().flat_map(|r| r.active.iter().copied()))
            .collect();
        if let HeadCache::Mlp { cache, .. } = &self.head {
            bits.extend(AttentionMlp::pattern(cache));
        }
        bits
    }
}

/// A residual base network `T(z) = z + U(z)` wrapped by one aggregation scheme.
///
/// Parameters are laid out `[U | attention]`.
#[derive(Clone, Debug)]
pub struct System {
    pub net: Network,
    pub scheme: SchemeConfig,
    head: Head,
    channels: usize,
}

impl System {
    pub fn new(net: Network, scheme: SchemeConfig) -> Result<Self> {
        scheme.validate()?;
        let channels = net.spec.output_channels()?;
        ensure!(
            channels == net.spec.input_channels,
            Shape,
            "residual base network must preserve channels ({} → {channels})",
            net.spec.input_channels
        );
        let n = scheme.n_candidates();
        let head = match (scheme.kind, scheme.attention) {
            (SchemeKind::Baseline, _) => Head::Identity,
            (_, AttentionKind::Uniform) => Head::Uniform,
            (_, AttentionKind::Mlp) => Head::Mlp(AttentionMlp { n }),
            (_, AttentionKind::Conv1x1) => Head::Conv(AttentionConv1x1 { n, channels }),
        };
        Ok(Self {
            net,
            scheme,
            head,
            channels,
        })
    }

    pub fn base_len(&self) -> usize {
        self.net.n_params()
    }

    pub fn head_len(&self) -> usize {
        match &self.head {
            Head::Identity | Head::Uniform => 0,
            Head::Mlp(m) => m.n_params(),
            Head::Conv(c) => c.n_params(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.base_len() + self.head_len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn attention_mlp(&self) -> Option<AttentionMlp> {
        match self.head {
            Head::Mlp(m) => Some(m),
            _ => None,
        }
    }

    pub fn attention_conv(&self) -> Option<AttentionConv1x1> {
        match self.head {
            Head::Conv(c) => Some(c),
            _ => None,
        }
    }

    pub fn init(&self, seed: Seed) -> Vec<f64> {
        let mut p = self.net.init(seed.derive("base"));
        match &self.head {
            Head::Identity | Head::Uniform => {}
            Head::Mlp(m) => p.extend(m.init(seed.derive("attention"))),
            Head::Conv(c) => p.extend(c.init(match self.scheme.kind {
                SchemeKind::Residual => MixInit::Sum,
                SchemeKind::Iterative { .. } => MixInit::First,
                _ => MixInit::Mean,
            })),
        }
        p
    }

    pub fn split<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        params.split_at(self.base_len())
    }

    fn check(&self, params: &[f64], input: &SystemInput) -> Result<()> {
        ensure!(
            params.len() == self.n_params(),
            Shape,
            "system expects {} parameters, got {}",
            self.n_params(),
            params.len()
        );
        ensure!(
            input.z.channels == self.channels,
            Shape,
            "input has {} channels, system expects {}",
            input.z.channels,
            self.channels
        );
        let need = self.scheme.n_branch_inputs();
        ensure!(
            input.branches.len() == need,
            InvalidArgument,
            "scheme expects {need} branch inputs, got {}",
            input.branches.len()
        );
        ensure!(
            input.branches.iter().all(|b| b.shape() == input.z.shape()),
            Shape,
            "branch input shape differs from the network input"
        );
        Ok(())
    }

    fn apply_u(&self, base: &[f64], x: &Features, opts: RunOptions) -> Result<Pass> {
        let pass = self.net.forward(base, x, opts)?;
        ensure!(pass.output.shape() == x.shape(), Shape, "base output {:?} differs from input", pass.output.shape());
        Ok(pass)
    }

    /// Evaluates the system. `opts` applies to every base-network application
    /// (e.g. linear mode); the attention head always runs as defined.
    pub fn forward(&self, params: &[f64], input: &SystemInput, opts: RunOptions) -> Result<SystemPass> {
        self.check(params, input)?;
        let (base, att) = self.split(params);
        let mut base_passes = Vec::new();
        let mut candidates = Vec::new();
        let residual = |x: &Features, p: &Pass| {
            let mut t = x.clone();
            t.add_assign(&p.output);
            t
        };
        match self.scheme.kind {
            SchemeKind::Baseline => {
                let p = self.apply_u(base, &input.z, opts)?;
                candidates.push(residual(&input.z, &p));
                base_passes.push(p);
            }
            SchemeKind::Bootstrap { .. } => {
                for zb in &input.branches {
                    let p = self.apply_u(base, zb, opts)?;
                    candidates.push(residual(zb, &p));
                    base_passes.push(p);
                }
            }
            SchemeKind::Residual => {
                let p = self.apply_u(base, &input.z, opts)?;
                candidates.push(input.z.clone());
                candidates.push(p.output.clone());
                base_passes.push(p);
            }
            SchemeKind::Iterative { n } => {
                let mut x = input.z.clone();
                for _ in 0..n {
                    let p = self.apply_u(base, &x, opts)?;
                    x = residual(&x, &p);
                    ensure!(x.is_finite(), NonFinite, "iterate diverged");
                    candidates.push(x.clone());
                    base_passes.push(p);
                }
            }
        }
        let (output, head) = match &self.head {
            Head::Identity => (candidates[0].clone(), HeadCache::Identity),
            Head::Uniform => {
                let mut v = candidates[0].zeros_like();
                let w = 1.0 / candidates.len() as f64;
                for c in &candidates {
                    v.axpy(w, c);
                }
                (v, HeadCache::Uniform)
            }
            Head::Mlp(m) => {
                let pooled: Vec<f64> = candidates.iter().map(|c| global_pool(c, self.scheme.pooling)).collect();
                let cache = m.forward(att, &pooled)?;
                let mut v = candidates[0].zeros_like();
                for (c, &w) in candidates.iter().zip(&cache.weights) {
                    v.axpy(w, c);
                }
                (v, HeadCache::Mlp { pooled, cache })
            }
            Head::Conv(c) => {
                let parts: Vec<&Features> = candidates.iter().collect();
                let concat = Features::concat(&parts)?;
                (c.forward(att, &concat)?, HeadCache::Conv { concat })
            }
        };
        ensure!(output.is_finite(), NonFinite, "system output diverged");
        Ok(SystemPass {
            output,
            candidates,
            base_passes,
            head,
        })
    }

    /// Gradient of `⟨upstream, v⟩` with respect to all parameters, accumulated
    /// into `grads`.
    pub fn backward(&self, params: &[f64], pass: &SystemPass, upstream: &Features, grads: &mut [f64]) -> Result<()> {
        ensure!(grads.len() == self.n_params(), Shape, "gradient buffer length");
        let (base, att) = self.split(params);
        let (gbase, gatt) = grads.split_at_mut(self.base_len());
        let k = pass.candidates.len();
        // gradient with respect to every candidate
        let mut dc: Vec<Features> = match (&self.head, &pass.head) {
            (Head::Identity, _) => vec![upstream.clone()],
            (Head::Uniform, _) => vec![upstream.scaled(1.0 / k as f64); k],
            (Head::Mlp(m), HeadCache::Mlp { cache, .. }) => {
                let dw: Vec<f64> = pass.candidates.iter().map(|c| c.dot(upstream)).collect();
                let dg = m.backward(att, cache, &dw, gatt);
                pass.candidates
                    .iter()
                    .zip(&cache.weights)
                    .zip(&dg)
                    .map(|((c, &w), &g)| {
                        let mut d = upstream.scaled(w);
                        global_pool_backward(c, self.scheme.pooling, g, &mut d);
                        d
                    })
                    .collect()
            }
            (Head::Conv(c), HeadCache::Conv { concat }) => {
                let gin = c.backward(att, concat, upstream, gatt)?;
                gin.split(&vec![self.channels; k])
            }
            _ => return Err(Error::InvalidArgument("pass does not belong to this system".into())),
        };
        match self.scheme.kind {
            SchemeKind::Baseline | SchemeKind::Bootstrap { .. } => {
                for (p, d) in pass.base_passes.iter().zip(&dc) {
                    self.net.backward(base, p, d, gbase)?;
                }
            }
            SchemeKind::Residual => {
                self.net.backward(base, &pass.base_passes[0], &dc[1], gbase)?;
            }
            SchemeKind::Iterative { .. } => {
                // xₙ = xₙ₋₁ + U(xₙ₋₁); sweep from the last iterate back
                for i in (0..k).rev() {
                    let acc = dc[i].clone();
                    let gin = self.net.backward(base, &pass.base_passes[i], &acc, gbase)?;
                    if i > 0 {
                        dc[i - 1].add_assign(&acc);
                        dc[i - 1].add_assign(&gin);
                    }
                }
            }
        }
        Ok(())
    }
}
