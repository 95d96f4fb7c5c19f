use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    /// `‖v* − v‖₂`.
    #[serde(rename = "l2")]
    L2,
    /// `‖v* − v‖₂²`.
    #[default]
    #[serde(rename = "squared-l2")]
    SquaredL2,
}

impl std::str::FromStr for Loss {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Loss::L2),
            "squared-l2" | "squared_l2" => Ok(Loss::SquaredL2),
            _ => Err(crate::Error::Config(format!("unknown loss `{s}` (l2 | squared-l2)"))),
        }
    }
}

/// Loss value and its gradient with respect to `v`. The unsquared norm has
/// gradient `0` at `v = v*`.
pub fn loss(kind: Loss, v_star: &[f64], v: &[f64]) -> Result<(f64, Vec<f64>)> {
    ensure!(v_star.len() == v.len(), Shape, "loss operands differ: {} vs {}", v_star.len(), v.len());
    let diff: Vec<f64> = v.iter().zip(v_star).map(|(a, b)| a - b).collect();
    let sq: f64 = diff.iter().map(|d| d * d).sum();
    Ok(match kind {
        Loss::SquaredL2 => (sq, diff.iter().map(|d| 2.0 * d).collect()),
        Loss::L2 => {
            let n = sq.sqrt();
            if n == 0.0 {
                (0.0, vec![0.0; diff.len()])
            } else {
                (n, diff.iter().map(|d| d / n).collect())
            }
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    ensure!(
        params.len() == grads.len() && grads.len() == state.m.len() && state.m.len() == state.v.len(),
        Shape,
        "adam layouts differ"
    );
    ensure!(grads.iter().all(|g| g.is_finite()), NonFinite, "gradient contains NaN or infinity");
    state.t += 1;
    let c1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// `max(floor, lr₀·2^(−⌊epoch/period⌋))`.
pub fn learning_rate(lr0: f64, period: usize, floor: f64, epoch: usize) -> f64 {
    let halvings = (epoch / period.max(1)).min(1074) as i32;
    (lr0 * 0.5f64.powi(halvings)).max(floor)
}
