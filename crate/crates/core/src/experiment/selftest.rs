use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::baselines::{grappa_calibrate, grappa_reconstruct, DEFAULT_RIDGE};
use crate::error::Result;
use crate::eval::{psnr, ssim_default, Image};
use crate::expressivity::{aggregated_basis, mask_operator, AttentionKind, GapMode, SchemeConfig, SchemeKind, System, SystemInput};
use crate::geometry::{
    build_frame_net, check_perfect_reconstruction, extract_basis, layer_matrices, planar_two_layer, region_census,
    FrameNetConfig, FramePooling, NetworkPatterns, Probes, DEFAULT_DENSE_CAP,
};
use crate::mri::{apply_forward, bootstrap_masks, exact_linear_kspace, generate_dataset, make_mask, DataConfig, Domain};
use crate::net::{build_unet, LayerKind, LayerParams, Network, NetworkSpec, RunOptions, UnetOptions};
use crate::tensor::{fft2, fft2_with_norm, ifft2, ComplexTensor, Features, FftNorm, Seed, C64};
use crate::trainer::{grad_check, prepare, train, Loss, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for CheckRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:<22} {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn row(name: &'static str, value: f64, tol: f64) -> CheckRow {
    CheckRow {
        name,
        pass: value <= tol,
        detail: format!("{value:.3e} (tol {tol:.0e})"),
    }
}

fn random_complex(shape: Vec<usize>, seed: u64) -> ComplexTensor {
    let mut rng = Seed(seed).rng();
    let n = shape.iter().product();
    let data = (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    ComplexTensor::new(shape, data).expect("shape matches data")
}

fn random_features(shape: [usize; 3], seed: u64) -> Features {
    let mut rng = Seed(seed).rng();
    let n = shape.iter().product();
    Features::new(shape[0], shape[1], shape[2], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("sized")
}

fn noisy_init(system: &System, seed: u64) -> Vec<f64> {
    let mut p = system.init(Seed(seed));
    let mut rng = Seed(seed ^ 0x5eed).rng();
    p.iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
    p
}

fn small_unet() -> Result<Network> {
    Network::new(build_unet(1, 2, 1, UnetOptions { convs_per_stage: 1, affine_bn: false })?)
}

fn tiny_data(n: usize) -> Result<Vec<crate::mri::Sample>> {
    let cfg = DataConfig {
        size: [16, 16],
        n_coils: 1,
        accel: [2, 1],
        acs: [4, 16],
        n_ellipses: 3,
        seed: Seed(3),
        ..DataConfig::default()
    };
    generate_dataset(&cfg, 0, n)
}

fn parseval(corrupt: bool) -> Result<CheckRow> {
    let x = random_complex(vec![2, 8, 8], 1);
    let norm = if corrupt { FftNorm::Backward } else { FftNorm::Unitary };
    let k = fft2_with_norm(&x, (1, 2), norm)?;
    Ok(row("parseval", (k.norm() - x.norm()).abs() / x.norm(), 1e-12))
}

fn fft_round_trip() -> Result<CheckRow> {
    let x = random_complex(vec![3, 6, 10], 2);
    Ok(row("fft-round-trip", ifft2(&fft2(&x, (1, 2))?, (1, 2))?.relative_error(&x), 1e-12))
}

fn frame_pr() -> Result<CheckRow> {
    let cfg = FrameNetConfig {
        levels: 2,
        q_in: 1,
        kernel: [2, 2],
        redundancy: 1,
        alpha: 0.8,
        skip: true,
        pooling: FramePooling::Haar { factor: [2, 2] },
    };
    let f = build_frame_net(&cfg, [8, 8], Seed(4))?;
    let pr = check_perfect_reconstruction(&f.net, &f.params, [8, 8], 4, Seed(5), DEFAULT_DENSE_CAP)?;
    Ok(row("frame-pr", pr.max_error, pr.tolerance))
}

fn basis_identity() -> Result<CheckRow> {
    let net = small_unet()?;
    let mut rng = Seed(6).rng();
    let params: Vec<f64> = net.layout.init(Seed(6)).into_iter().map(|v| v + rng.random_range(-0.2..0.2)).collect();
    let z = random_features([2, 8, 8], 7);
    let b = extract_basis(&net, &params, Some(&z), [8, 8], DEFAULT_DENSE_CAP)?;
    Ok(row("basis-identity", b.reconstruct(&z)?.relative_error(&net.output(&params, &z)?), 1e-8))
}

fn aggregated() -> Result<CheckRow> {
    let kind = SchemeKind::Bootstrap { n: 2, keep_ratio: 0.8 };
    let sys = System::new(small_unet()?, SchemeConfig { kind, attention: AttentionKind::Mlp, pooling: GapMode::Magnitude })?;
    let p = noisy_init(&sys, 8);
    let base = make_mask(&[8, 8], &[2, 2], &[2, 2])?;
    let masks = bootstrap_masks(&base, 2, 0.8, Seed(9))?
        .iter()
        .map(|m| mask_operator(m, 1, [8, 8], Domain::Image))
        .collect::<Result<Vec<_>>>()?;
    let z = random_features([2, 8, 8], 10);
    let branches = masks
        .iter()
        .map(|m| Features {
            data: (m * DVector::from_column_slice(&z.data)).data.into(),
            ..z.clone()
        })
        .collect();
    let pass = sys.forward(&p, &SystemInput { z: z.clone(), branches }, RunOptions::linear())?;
    let u = extract_basis(&sys.net, &p[..sys.base_len()], None, [8, 8], DEFAULT_DENSE_CAP)?;
    let agg = aggregated_basis(&sys, &p, &pass, &u, &masks)?;
    Ok(row("aggregated-basis", agg.reconstruct(&z)?.relative_error(&pass.output), 1e-9))
}

fn gradients() -> Result<CheckRow> {
    let data = tiny_data(1)?;
    let sys = System::new(small_unet()?, SchemeConfig::with_default_attention(SchemeKind::Residual))?;
    let prep = prepare(&data[0], Domain::Image, SchemeKind::Residual, true, Seed(0))?;
    let r = grad_check(&sys, &sys.init(Seed(11)), &prep, Loss::SquaredL2, 24, Seed(12))?;
    Ok(row("grad-check", r.max_rel_error, 1e-5))
}

fn circulant_normals() -> Result<CheckRow> {
    let net = Network::new(NetworkSpec::new(1, vec![LayerKind::Conv { kernel: [2, 1], out: 1, bias: false }], 1)?)?;
    let mut p = vec![0.0; net.n_params()];
    if let LayerParams::Conv { weight, .. } = &net.layout.layers[0] {
        p[weight.clone()].copy_from_slice(&[1.0, 2.0]);
    }
    let m = layer_matrices(&net, &p, 0, [3, 1], None, DEFAULT_DENSE_CAP)?;
    let expect = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 2.0, 2.0, 0.0, 1.0]);
    Ok(row("circulant-normals", (m.main - expect).amax(), 0.0))
}

fn census_bound() -> Result<CheckRow> {
    let net = planar_two_layer()?;
    let mut rng = Seed(13).rng();
    let p: Vec<f64> = (0..net.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c = region_census(&NetworkPatterns { net: &net, params: &p, extents: [1, 1] }, &Probes::plane(2.0, 32))?;
    Ok(CheckRow {
        name: "census-bound",
        pass: c.within_bound(),
        detail: format!("{} regions, {} neurons", c.count, c.n_neurons),
    })
}

fn metrics_identity() -> Result<CheckRow> {
    let mut rng = Seed(14).rng();
    let img = Image::new(16, 16, (0..256).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let (p, s) = (psnr(&img, &img)?, ssim_default(&img, &img)?);
    Ok(CheckRow {
        name: "metrics-identity",
        pass: p == f64::INFINITY && s == 1.0,
        detail: format!("psnr {p}, ssim {s}"),
    })
}

fn grappa_exact() -> Result<CheckRow> {
    let mask = make_mask(&[24, 20], &[2, 2], &[8, 8])?;
    let model = exact_linear_kspace([24, 20], 4, 6, Seed(15))?;
    let k = grappa_calibrate(&model.kspace, &mask, [2, 2], DEFAULT_RIDGE)?;
    let rec = grappa_reconstruct(&apply_forward(&model.kspace, &mask)?, &mask, &k)?;
    Ok(row("grappa-exact-linear", rec.relative_error(&model.kspace), 1e-8))
}

fn determinism() -> Result<CheckRow> {
    let data = tiny_data(3)?;
    let sys = System::new(small_unet()?, SchemeConfig::with_default_attention(SchemeKind::Bootstrap { n: 2, keep_ratio: 0.8 }))?;
    let cfg = TrainConfig {
        scheme: sys.scheme,
        epochs: 2,
        max_steps: Some(5),
        seed: Seed(16),
        ..TrainConfig::default()
    };
    let a = train(&cfg, &sys, &data[..2], &data[2..])?;
    let b = train(&cfg, &sys, &data[..2], &data[2..])?;
    let same = a.params.iter().zip(&b.params).all(|(x, y)| x.to_bits() == y.to_bits());
    Ok(CheckRow {
        name: "training-determinism",
        pass: same && a.steps == 4,
        detail: format!("{} steps, bitwise {}", a.steps, if same { "equal" } else { "different" }),
    })
}

/// Fast invariant checks. `corrupt_fft` swaps the unitary FFT scaling for the
/// unnormalized one in the Parseval check, which must then fail.
pub fn selftest(corrupt_fft: bool) -> Vec<CheckRow> {
    let checks: [(&'static str, Box<dyn Fn() -> Result<CheckRow>>); 11] = [
        ("parseval", Box::new(move || parseval(corrupt_fft))),
        ("fft-round-trip", Box::new(fft_round_trip)),
        ("frame-pr", Box::new(frame_pr)),
        ("basis-identity", Box::new(basis_identity)),
        ("aggregated-basis", Box::new(aggregated)),
        ("grad-check", Box::new(gradients)),
        ("circulant-normals", Box::new(circulant_normals)),
        ("census-bound", Box::new(census_bound)),
        ("metrics-identity", Box::new(metrics_identity)),
        ("grappa-exact-linear", Box::new(grappa_exact)),
        ("training-determinism", Box::new(determinism)),
    ];
    checks
        .into_iter()
        .map(|(name, f)| {
            f().unwrap_or_else(|e| CheckRow {
                name,
                pass: false,
                detail: format!("error: {e}"),
            })
        })
        .collect()
}
