use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{eval_branch_seed, prepare, reconstruct, score, train_branch_seed, Prepared};
use super::optim::{adam_step, learning_rate, loss, AdamState, Loss};
use crate::error::{ensure, Result};
use crate::expressivity::{SchemeConfig, System};
use crate::mri::{Domain, Sample};
use crate::net::{LayerParams, RunOptions};
use crate::tensor::Seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub domain: Domain,
    pub scheme: SchemeConfig,
    pub lr0: f64,
    /// Epochs between learning-rate halvings.
    pub period: usize,
    pub floor: f64,
    pub epochs: usize,
    /// Stops after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub seed: Seed,
    pub loss: Loss,
    pub normalize: bool,
    /// Start from `T(z) = z` by zeroing the base network's last convolution.
    #[serde(default)]
    pub zero_output_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            domain: Domain::Image,
            scheme: SchemeConfig::baseline(),
            lr0: 1e-3,
            period: 10,
            floor: 1e-4,
            epochs: 1,
            max_steps: None,
            seed: Seed(0),
            loss: Loss::SquaredL2,
            normalize: true,
            zero_output_init: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.floor > 0.0 && self.lr0 > self.floor, Config, "need lr0 > floor > 0");
        ensure!(self.epochs >= 1, Config, "epochs must be at least 1");
        ensure!(self.period >= 1, Config, "halving period must be at least 1");
        self.scheme.validate()
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        learning_rate(self.lr0, self.period, self.floor, epoch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_psnr: f64,
    pub val_ssim: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Vec<f64>,
    pub log: Vec<EpochMetrics>,
    pub steps: usize,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    /// Set when a non-finite loss or gradient stopped training; `params`
    /// then holds the last finite iterate.
    pub diverged: bool,
}

impl TrainOutcome {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,val_psnr,val_ssim\n");
        for m in &self.log {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                m.epoch,
                m.lr,
                m.train_loss,
                crate::eval::format_db(m.val_psnr),
                m.val_ssim
            ));
        }
        s
    }
}

/// Mean PSNR/SSIM of `system` over `samples` (bootstrap masks from the
/// evaluation seed).
pub fn evaluate(system: &System, params: &[f64], samples: &[Sample], config: &TrainConfig) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let (mut p, mut s) = (0.0, 0.0);
    for (i, sample) in samples.iter().enumerate() {
        let prep = prepare(sample, config.domain, config.scheme.kind, config.normalize, eval_branch_seed(config.seed, i))?;
        let (ps, ss, _) = score(&reconstruct(system, params, &prep, config.domain)?, sample)?;
        p += ps;
        s += ss;
    }
    let n = samples.len() as f64;
    Ok((p / n, s / n))
}

/// Loss and gradient of one prepared sample.
pub fn loss_and_grad(system: &System, params: &[f64], prep: &Prepared, kind: Loss, grads: &mut [f64]) -> Result<f64> {
    let pass = system.forward(params, &prep.input, RunOptions::default())?;
    let (value, g) = loss(kind, &prep.target.data, &pass.output.data)?;
    if !value.is_finite() {
        return Ok(value);
    }
    let mut upstream = pass.output.zeros_like();
    upstream.data = g;
    system.backward(params, &pass, &upstream, grads)?;
    Ok(value)
}

/// Adam on single-sample batches, visiting the training set in a seeded
/// random order each epoch and validating after each epoch.
pub fn train(config: &TrainConfig, system: &System, train_set: &[Sample], val_set: &[Sample]) -> Result<TrainOutcome> {
    train_from(config, system, initial_params(config, system), train_set, val_set)
}

/// Parameters `train` starts from.
pub fn initial_params(config: &TrainConfig, system: &System) -> Vec<f64> {
    let mut p = system.init(config.seed.derive("init"));
    if config.zero_output_init {
        zero_output_layer(system, &mut p);
    }
    p
}

/// Zeroes weight and bias of the last convolution of the base network.
pub fn zero_output_layer(system: &System, params: &mut [f64]) {
    let last = system.net.layout.layers.iter().rev().find_map(|l| match l {
        LayerParams::Conv { weight, bias, .. } => Some((weight.clone(), bias.clone())),
        _ => None,
    });
    if let Some((w, b)) = last {
        params[w].iter_mut().for_each(|v| *v = 0.0);
        if let Some(b) = b {
            params[b].iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

pub fn train_from(
    config: &TrainConfig,
    system: &System,
    init: Vec<f64>,
    train_set: &[Sample],
    val_set: &[Sample],
) -> Result<TrainOutcome> {
    config.validate()?;
    ensure!(!train_set.is_empty(), InvalidArgument, "empty training set");
    ensure!(system.scheme == config.scheme, InvalidArgument, "system scheme differs from the training config");
    ensure!(init.len() == system.n_params(), Shape, "initial parameters have the wrong length");
    let bootstrap = config.scheme.n_branch_inputs() > 0;
    let fixed: Vec<Prepared> = train_set
        .iter()
        .map(|s| prepare(s, config.domain, config.scheme.kind, config.normalize, Seed(0)))
        .collect::<Result<_>>()?;
    let mut params = init;
    let mut adam = AdamState::new(params.len());
    let mut grads = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = config.seed.derive("order").rng();
    let mut out = TrainOutcome {
        params: Vec::new(),
        log: Vec::new(),
        steps: 0,
        step_losses: Vec::new(),
        diverged: false,
    };
    'epochs: for epoch in 0..config.epochs {
        let lr = config.lr(epoch);
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for &i in &order {
            if config.max_steps.is_some_and(|m| out.steps >= m) {
                break;
            }
            let fresh;
            let prep = if bootstrap {
                fresh = prepare(
                    &train_set[i],
                    config.domain,
                    config.scheme.kind,
                    config.normalize,
                    train_branch_seed(config.seed, i, epoch),
                )?;
                &fresh
            } else {
                &fixed[i]
            };
            grads.iter_mut().for_each(|g| *g = 0.0);
            let value = loss_and_grad(system, &params, prep, config.loss, &mut grads)?;
            let mut next = params.clone();
            if !value.is_finite() || adam_step(&mut next, &grads, &mut adam, lr).is_err() || next.iter().any(|p| !p.is_finite()) {
                out.diverged = true;
                break 'epochs;
            }
            params = next;
            out.steps += 1;
            out.step_losses.push(value);
            total += value;
            count += 1;
        }
        if count == 0 {
            break;
        }
        let (val_psnr, val_ssim) = evaluate(system, &params, val_set, config)?;
        out.log.push(EpochMetrics {
            epoch,
            lr,
            train_loss: total / count as f64,
            val_psnr,
            val_ssim,
        });
    }
    out.params = params;
    Ok(out)
}
