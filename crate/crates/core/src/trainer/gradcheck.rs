use rand::seq::index::sample as pick;

use super::data::Prepared;
use super::optim::Loss;
use super::train::loss_and_grad;
use crate::error::Result;
use crate::expressivity::System;
use crate::net::RunOptions;
use crate::tensor::Seed;

pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±step probe changed the ReLU pattern.
    pub excluded: Vec<usize>,
}

/// Central differences on `n_coords` random coordinates against the analytic
/// gradient of the full loss. Denominator `max(|a|, |fd|, 1e-12)`.
pub fn grad_check(system: &System, params: &[f64], prep: &Prepared, kind: Loss, n_coords: usize, seed: Seed) -> Result<GradCheck> {
    let mut grads = vec![0.0; params.len()];
    loss_and_grad(system, params, prep, kind, &mut grads)?;
    let pattern = system.forward(params, &prep.input, RunOptions::default())?.pattern();
    let eval = |p: &[f64]| -> Result<(Vec<f64>, Vec<bool>)> {
        let pass = system.forward(p, &prep.input, RunOptions::default())?;
        let pattern = pass.pattern();
        Ok((pass.output.data, pattern))
    };
    let mut rng = seed.rng();
    let coords = pick(&mut rng, params.len(), n_coords.min(params.len())).into_vec();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        excluded: Vec::new(),
    };
    let mut p = params.to_vec();
    for i in coords {
        p[i] = params[i] + FD_STEP;
        let (up, pu) = eval(&p)?;
        p[i] = params[i] - FD_STEP;
        let (down, pd) = eval(&p)?;
        p[i] = params[i];
        if pu != pattern || pd != pattern {
            out.excluded.push(i);
            continue;
        }
        let fd = loss_difference(kind, &prep.target.data, &up, &down) / (2.0 * FD_STEP);
        let a = grads[i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-12);
        out.max_rel_error = out.max_rel_error.max(rel);
        out.checked += 1;
    }
    Ok(out)
}


/// `loss(t, u) − loss(t, d)` without subtracting two large sums:
/// `Σ (u − d)(u + d − 2t)`, divided by `‖u − t‖ + ‖d − t‖` for the norm.
pub fn loss_difference(kind: Loss, target: &[f64], u: &[f64], d: &[f64]) -> f64 {
    let sq_diff: f64 = u.iter().zip(d).zip(target).map(|((a, b), t)| (a - b) * (a + b - 2.0 * t)).sum();
    match kind {
        Loss::SquaredL2 => sq_diff,
        Loss::L2 => {
            let norm = |x: &[f64]| x.iter().zip(target).map(|(a, t)| (a - t) * (a - t)).sum::<f64>().sqrt();
            let den = norm(u) + norm(d);
            if den == 0.0 { 0.0 } else { sq_diff / den }
        }
    }
}
