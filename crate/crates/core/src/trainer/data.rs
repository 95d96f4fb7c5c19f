use crate::error::Result;
use crate::eval::{psnr, ssim_default, ssos, Image};
use crate::expressivity::{SchemeKind, System, SystemInput};
use crate::mri::{apply_forward, bootstrap_masks, Domain, Sample};
use crate::net::{channels_to_complex, complex_to_channels, RunOptions};
use crate::tensor::{ComplexTensor, Features, Seed};

/// Network-ready input and label of one sample.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub input: SystemInput,
    pub target: Features,
    /// Divisor applied to input and target; `1` when normalization is off.
    pub scale: f64,
}

/// Standard deviation of `|x|` over all entries.
pub fn magnitude_std(x: &ComplexTensor) -> f64 {
    let n = x.len().max(1) as f64;
    let mags: Vec<f64> = x.data().iter().map(|v| v.norm()).collect();
    let mean = mags.iter().sum::<f64>() / n;
    (mags.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n).sqrt()
}

fn features(domain: Domain, kspace: &ComplexTensor, scale: f64) -> Result<Features> {
    Ok(complex_to_channels(&domain.from_kspace(kspace)?)?.scaled(1.0 / scale))
}

/// Builds `z = D(P_Λ y)`, the label `D(y)` and, for bootstrap schemes, the
/// sub-masked inputs drawn from `branch_seed`.
pub fn prepare(sample: &Sample, domain: Domain, kind: SchemeKind, normalize: bool, branch_seed: Seed) -> Result<Prepared> {
    let y = apply_forward(&sample.full_kspace, &sample.mask)?;
    let zc = domain.from_kspace(&y)?;
    let scale = if normalize {
        let s = magnitude_std(&zc);
        if s > 0.0 { s } else { 1.0 }
    } else {
        1.0
    };
    let z = complex_to_channels(&zc)?.scaled(1.0 / scale);
    let target = features(domain, &sample.full_kspace, scale)?;
    let branches = match kind {
        SchemeKind::Bootstrap { n, keep_ratio } => bootstrap_masks(&sample.mask, n, keep_ratio, branch_seed)?
            .iter()
            .map(|m| features(domain, &apply_forward(&sample.full_kspace, m)?, scale))
            .collect::<Result<Vec<_>>>()?,
        _ => Vec::new(),
    };
    Ok(Prepared {
        input: SystemInput { z, branches },
        target,
        scale,
    })
}

/// Seed of the bootstrap masks used for `sample` in `epoch`. Evaluation uses
/// [`eval_branch_seed`] instead.
pub fn train_branch_seed(seed: Seed, sample: usize, epoch: usize) -> Seed {
    seed.derive("bootstrap").child(sample as u64).child(epoch as u64)
}

pub fn eval_branch_seed(seed: Seed, sample: usize) -> Seed {
    seed.derive("bootstrap-eval").child(sample as u64)
}

/// Coil images reconstructed by the trained system, undoing normalization.
pub fn reconstruct(system: &System, params: &[f64], prepared: &Prepared, domain: Domain) -> Result<ComplexTensor> {
    let pass = system.forward(params, &prepared.input, RunOptions::default())?;
    let out = channels_to_complex(&pass.output.scaled(prepared.scale))?;
    domain.to_image(&out)
}

/// PSNR and SSIM of coil images against the sample's fully sampled SSoS.
pub fn score(recon_images: &ComplexTensor, sample: &Sample) -> Result<(f64, f64, Image)> {
    let truth = ssos(&sample.label_image()?)?;
    let img = ssos(recon_images)?;
    Ok((psnr(&img, &truth)?, ssim_default(&img, &truth)?, img))
}
