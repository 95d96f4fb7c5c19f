use crate::error::{ensure, Error, Result};
use crate::mri::SamplingMask;
use crate::net::{channels_to_complex, complex_to_channels, LayerKind, Network, NetworkSpec, RunOptions};
use crate::tensor::{ComplexTensor, Features, Seed, C64};
use crate::trainer::{adam_step, AdamState};

/// Three-layer scan-specific interpolator. Kernels are in lattice units:
/// the first and last layers act on the acquired lines only.
#[derive(Clone, Debug, PartialEq)]
pub struct RakiConfig {
    pub kernel1: [usize; 2],
    pub hidden1: usize,
    pub hidden2: usize,
    pub kernel3: [usize; 2],
    pub epochs: usize,
    pub lr: f64,
    /// Largest k-space magnitude after scaling.
    pub target_max: f64,
    pub seed: Seed,
    pub bias: bool,
}

impl Default for RakiConfig {
    fn default() -> Self {
        Self {
            kernel1: [2, 5],
            hidden1: 32,
            hidden2: 8,
            kernel3: [1, 3],
            epochs: 500,
            lr: 3e-3,
            target_max: 0.015,
            seed: Seed(0),
            bias: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RakiModel {
    pub net: Network,
    pub params: Vec<f64>,
    pub accel: usize,
    pub n_coils: usize,
    pub target_max: f64,
    /// Calibration loss after each epoch (mean squared error, scaled units).
    pub losses: Vec<f64>,
}

impl RakiModel {
    /// Calibration loss of the current parameters.
    pub fn calibration_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

fn raki_spec(cfg: &RakiConfig, n_coils: usize, accel: usize) -> Result<NetworkSpec> {
    let conv = |kernel, out| LayerKind::Conv { kernel, out, bias: cfg.bias };
    NetworkSpec::new(
        2 * n_coils,
        vec![
            conv(cfg.kernel1, cfg.hidden1),
            LayerKind::Relu,
            conv([1, 1], cfg.hidden2),
            LayerKind::Relu,
            conv(cfg.kernel3, (accel - 1) * 2 * n_coils),
        ],
        2,
    )
}

/// Line acceleration of a mask that only depends on the phase-encode row.
fn line_accel(mask: &SamplingMask) -> Result<usize> {
    ensure!(
        mask.line_pattern().is_some() && (mask.rank() == 1 || mask.accel()[1] == 1),
        Unsupported,
        "RAKI needs a 1-D (line) sampling pattern"
    );
    let r = mask.accel()[0];
    ensure!(r >= 2, InvalidArgument, "nothing to interpolate at R = 1");
    Ok(r)
}

fn dims(x: &ComplexTensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Shape(format!("expected [N_c, H, W] k-space, got {:?}", x.shape()))),
    }
}

fn max_abs(x: &ComplexTensor) -> f64 {
    x.data().iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Rows `first, first + step, …` (within `rows`) of a `[N_c, H, W]` tensor.
fn take_rows(x: &ComplexTensor, rows: impl Iterator<Item = usize>, scale: f64) -> Result<Features> {
    let (nc, h, w) = dims(x)?;
    let rows: Vec<usize> = rows.collect();
    let mut data = Vec::with_capacity(nc * rows.len() * w);
    for c in 0..nc {
        for &r in &rows {
            data.extend(x.data()[(c * h + r) * w..(c * h + r + 1) * w].iter().map(|v| v * scale));
        }
    }
    complex_to_channels(&ComplexTensor::new(vec![nc, rows.len(), w], data)?)
}

/// Receptive field of the network along the lattice axis, as row offsets.
fn row_reach(cfg: &RakiConfig) -> (isize, isize) {
    let a1 = (cfg.kernel1[0] as isize - 1) / 2;
    let a3 = (cfg.kernel3[0] as isize - 1) / 2;
    (-a1 - a3, (cfg.kernel1[0] as isize - 1 - a1) + (cfg.kernel3[0] as isize - 1 - a3))
}

struct Phase {
    input: Features,
    target: Features,
    valid: Vec<bool>,
}

/// Trains on the ACS only: each row phase `s < R` of the ACS block gives a
/// lattice `s, s + R, …` and targets at `s + bR + d`, `0 < d < R`.
pub fn raki_train(kspace: &ComplexTensor, mask: &SamplingMask, cfg: &RakiConfig) -> Result<RakiModel> {
    let (nc, h, w) = dims(kspace)?;
    mask.check_extents([h, w])?;
    let r = line_accel(mask)?;
    let net = Network::new(raki_spec(cfg, nc, r)?)?;
    let peak = max_abs(kspace);
    let scale = if peak > 0.0 { cfg.target_max / peak } else { 1.0 };
    let (r0, rh) = (mask.acs_start()[0], mask.acs_extent()[0]);
    let (lo, hi) = row_reach(cfg);
    let mut phases = Vec::new();
    for s in 0..r {
        let nb = (rh - s).div_ceil(r);
        let valid: Vec<bool> = (0..nb as isize)
            .map(|b| b + lo >= 0 && b + hi < nb as isize && s + b as usize * r + r - 1 < rh)
            .collect();
        if !valid.iter().any(|&v| v) {
            continue;
        }
        let input = take_rows(kspace, (0..nb).map(|b| r0 + s + b * r), scale)?;
        let mut parts = Vec::new();
        for d in 1..r {
            parts.push(take_rows(kspace, (0..nb).map(|b| (r0 + s + b * r + d).min(r0 + rh - 1)), scale)?);
        }
        let target = Features::concat(&parts.iter().collect::<Vec<_>>())?;
        phases.push(Phase { input, target, valid });
    }
    ensure!(!phases.is_empty(), Infeasible, "ACS of {rh} rows is too small for the RAKI receptive field at R = {r}");
    let count: usize = phases.iter().map(|p| p.valid.iter().filter(|&&v| v).count() * p.target.channels * w).sum();
    let mut params = net.init(cfg.seed);
    let mut adam = AdamState::new(params.len());
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut grads = vec![0.0; params.len()];
    for _ in 0..cfg.epochs {
        grads.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for p in &phases {
            let pass = net.forward(&params, &p.input, RunOptions::default())?;
            let mut up = pass.output.zeros_like();
            let plane = pass.output.plane_len();
            for (i, (o, t)) in pass.output.data.iter().zip(&p.target.data).enumerate() {
                if p.valid[(i % plane) / w] {
                    let e = o - t;
                    loss += e * e;
                    up.data[i] = 2.0 * e / count as f64;
                }
            }
            net.backward(&params, &pass, &up, &mut grads)?;
        }
        losses.push(loss / count as f64);
        adam_step(&mut params, &grads, &mut adam, cfg.lr)?;
    }
    let model = RakiModel {
        net,
        params,
        accel: r,
        n_coils: nc,
        target_max: cfg.target_max,
        losses: Vec::new(),
    };
    let final_loss = calibration_loss(&model, &phases, count, w)?;
    Ok(RakiModel {
        losses: losses.into_iter().chain([final_loss]).collect(),
        ..model
    })
}

fn calibration_loss(model: &RakiModel, phases: &[Phase], count: usize, w: usize) -> Result<f64> {
    let mut loss = 0.0;
    for p in phases {
        let out = model.net.output(&model.params, &p.input)?;
        let plane = out.plane_len();
        for (i, (o, t)) in out.data.iter().zip(&p.target.data).enumerate() {
            if p.valid[(i % plane) / w] {
                loss += (o - t) * (o - t);
            }
        }
    }
    Ok(loss / count as f64)
}

/// Fills unsampled lines from the acquired lattice rows `0, R, 2R, …`
/// (circular along both axes). Sampled entries pass through unchanged.
pub fn raki_reconstruct(model: &RakiModel, kspace: &ComplexTensor, mask: &SamplingMask) -> Result<ComplexTensor> {
    let (nc, h, w) = dims(kspace)?;
    mask.check_extents([h, w])?;
    ensure!(nc == model.n_coils, Shape, "model has {} coils, data {nc}", model.n_coils);
    let r = line_accel(mask)?;
    ensure!(r == model.accel, Shape, "model trained at R = {}, mask has R = {r}", model.accel);
    ensure!(h % r == 0, Unsupported, "{h} rows are not a multiple of R = {r}");
    let peak = max_abs(kspace);
    let scale = if peak > 0.0 { model.target_max / peak } else { 1.0 };
    let input = take_rows(kspace, (0..h / r).map(|b| b * r), scale)?;
    let out = model.net.output(&model.params, &input)?;
    let parts = out.split(&vec![2 * nc; r - 1]);
    let rows = mask.line_pattern().expect("checked by line_accel");
    let mut rec = kspace.clone();
    for (d, part) in parts.iter().enumerate() {
        let vals = channels_to_complex(part)?;
        for b in 0..h / r {
            let y = b * r + d + 1;
            if rows[y] {
                continue;
            }
            for c in 0..nc {
                for x in 0..w {
                    let v: C64 = vals.data()[(c * (h / r) + b) * w + x];
                    rec.data_mut()[(c * h + y) * w + x] = v / scale;
                }
            }
        }
    }
    Ok(rec)
}
