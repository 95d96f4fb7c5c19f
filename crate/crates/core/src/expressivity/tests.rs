use proptest::prelude::*;
use rand::seq::index::sample;
use rand::Rng;

use super::*;
use crate::geometry::{extract_basis, region_census, PatternSource, Probes, DEFAULT_DENSE_CAP};
use crate::mri::{bootstrap_masks, make_mask, Domain};
use crate::net::{build_unet, Network, RunOptions, UnetOptions};
use crate::tensor::{Features, Seed};

fn base_net() -> Network {
    Network::new(
        build_unet(
            1,
            2,
            1,
            UnetOptions {
                convs_per_stage: 1,
                affine_bn: false,
            },
        )
        .unwrap(),
    )
    .unwrap()
}

fn random_features(shape: [usize; 3], seed: u64) -> Features {
    let mut rng = Seed(seed).rng();
    let n = shape.iter().product();
    Features::new(shape[0], shape[1], shape[2], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Init plus noise on every parameter so biases and heads are generic.
fn random_params(system: &System, seed: u64) -> Vec<f64> {
    let mut p = system.init(Seed(seed));
    let mut rng = Seed(seed ^ 77).rng();
    for v in &mut p {
        *v += rng.random_range(-0.2..0.2);
    }
    p
}

fn system(kind: SchemeKind, attention: AttentionKind) -> System {
    System::new(
        base_net(),
        SchemeConfig {
            kind,
            attention,
            pooling: GapMode::Magnitude,
        },
    )
    .unwrap()
}

fn mask_ops(n: usize, keep: f64, extents: [usize; 2], domain: Domain) -> Vec<nalgebra::DMatrix<f64>> {
    if n == 0 {
        return Vec::new();
    }
    let base = make_mask(&extents, &[2, 2], &[2, 2]).unwrap();
    bootstrap_masks(&base, n, keep, Seed(5))
        .unwrap()
        .iter()
        .map(|m| mask_operator(m, 1, extents, domain).unwrap())
        .collect()
}

fn input_for(system: &System, z: &Features, masks: &[nalgebra::DMatrix<f64>]) -> SystemInput {
    let branches = masks
        .iter()
        .take(system.scheme.n_branch_inputs())
        .map(|m| Features {
            data: (m * nalgebra::DVector::from_column_slice(&z.data)).data.into(),
            ..z.clone()
        })
        .collect();
    SystemInput { z: z.clone(), branches }
}

#[test]
fn zero_mlp_gives_half_weights() {
    let mlp = AttentionMlp { n: 4 };
    let mut p = vec![0.0; mlp.n_params()];
    let outs: Vec<Features> = (0..4).map(|i| random_features([2, 3, 3], i)).collect();
    assert_eq!(attention_mlp_weights(&p, &outs, GapMode::Magnitude).unwrap(), vec![0.5; 4]);
    let b2 = mlp.n_params() - 4;
    p[b2 + 2] = 10.0;
    let w = attention_mlp_weights(&p, &outs, GapMode::Magnitude).unwrap();
    assert!((w[2] - 0.999_954_602_131_297_6).abs() < 1e-15);
    assert!(attention_mlp_weights(&p, &outs[..3], GapMode::Magnitude).is_err());
}

#[test]
fn mlp_matches_straight_line_oracle() {
    let mlp = AttentionMlp { n: 3 };
    let mut rng = Seed(1).rng();
    let p: Vec<f64> = (0..mlp.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let outs: Vec<Features> = (0..3).map(|i| random_features([4, 2, 3], 10 + i)).collect();
    let got = attention_mlp_weights(&p, &outs, GapMode::Magnitude).unwrap();
    // oracle: explicit magnitudes and loops over the documented layout
    let mut g = [0.0; 3];
    for (k, o) in outs.iter().enumerate() {
        let mut s = 0.0;
        for i in 0..12 {
            s += (o.data[i] * o.data[i] + o.data[12 + i] * o.data[12 + i]).sqrt();
        }
        g[k] = s / 12.0;
    }
    let (w1, b1, w2, b2) = (&p[0..192], &p[192..256], &p[256..448], &p[448..451]);
    for k in 0..3 {
        let mut a = b2[k];
        for h in 0..64 {
            let pre = b1[h] + w1[h * 3] * g[0] + w1[h * 3 + 1] * g[1] + w1[h * 3 + 2] * g[2];
            a += w2[k * 64 + h] * if pre > 0.0 { pre } else { 0.0 };
        }
        let expect = 1.0 / (1.0 + (-a).exp());
        assert!((got[k] - expect).abs() <= 1e-12);
    }
}

#[test]
fn forced_single_branch_bootstrap_is_the_branch() {
    let sys = system(SchemeKind::Bootstrap { n: 1, keep_ratio: 0.9 }, AttentionKind::Mlp);
    let mut p = random_params(&sys, 1);
    let last = p.len() - 1;
    p[last] = 40.0;
    let masks = mask_ops(1, 0.9, [8, 8], Domain::Image);
    let z = random_features([2, 8, 8], 2);
    let input = input_for(&sys, &z, &masks);
    let v = sys.forward(&p, &input, RunOptions::default()).unwrap().output;
    let mut t = input.branches[0].clone();
    t.add_assign(&sys.net.output(&p[..sys.base_len()], &input.branches[0]).unwrap());
    assert_eq!(v, t);
}

#[test]
fn full_keep_ratio_makes_branches_identical() {
    let sys = system(SchemeKind::Bootstrap { n: 3, keep_ratio: 1.0 }, AttentionKind::Mlp);
    let p = random_params(&sys, 2);
    let z = random_features([2, 8, 8], 3);
    let input = SystemInput {
        z: z.clone(),
        branches: vec![z.clone(); 3],
    };
    let pass = sys.forward(&p, &input, RunOptions::default()).unwrap();
    let w: f64 = pass.weights().unwrap().iter().sum();
    assert!(pass.output.relative_error(&pass.candidates[0].scaled(w)) < 1e-14);
}

#[test]
fn residual_conv_starts_as_plain_residual() {
    let sys = system(SchemeKind::Residual, AttentionKind::Conv1x1);
    let mut p = sys.init(Seed(3));
    let z = random_features([2, 8, 8], 4);
    let v = sys.forward(&p, &SystemInput::plain(z.clone()), RunOptions::default()).unwrap().output;
    let mut expect = z.clone();
    expect.add_assign(&sys.net.output(&p[..sys.base_len()], &z).unwrap());
    assert!(v.relative_error(&expect) < 1e-15);
    let base = sys.base_len();
    p[..base].fill(0.0);
    let v = sys.forward(&p, &SystemInput::plain(z.clone()), RunOptions::default()).unwrap().output;
    assert_eq!(v, z);
}

#[test]
fn iterative_reductions() {
    let sys = system(SchemeKind::Iterative { n: 1 }, AttentionKind::Mlp);
    let p = random_params(&sys, 4);
    let z = random_features([2, 8, 8], 5);
    let pass = sys.forward(&p, &SystemInput::plain(z.clone()), RunOptions::default()).unwrap();
    let w = pass.weights().unwrap()[0];
    assert!(pass.output.relative_error(&pass.candidates[0].scaled(w)) < 1e-15);

    let sys = system(SchemeKind::Iterative { n: 3 }, AttentionKind::Mlp);
    let mut p = random_params(&sys, 4);
    let base = sys.base_len();
    p[..base].fill(0.0);
    let pass = sys.forward(&p, &SystemInput::plain(z.clone()), RunOptions::default()).unwrap();
    assert!(pass.candidates.iter().all(|c| *c == z));
    let w: f64 = pass.weights().unwrap().iter().sum();
    assert!(pass.output.relative_error(&z.scaled(w)) < 1e-15);
}

#[test]
fn input_validation() {
    let sys = system(SchemeKind::Bootstrap { n: 2, keep_ratio: 0.9 }, AttentionKind::Mlp);
    let p = sys.init(Seed(1));
    let z = random_features([2, 8, 8], 5);
    assert!(sys.forward(&p, &SystemInput::plain(z.clone()), RunOptions::default()).is_err());
    assert!(sys.forward(&p[1..], &SystemInput::plain(z), RunOptions::default()).is_err());
    let bad = SchemeConfig {
        kind: SchemeKind::Residual,
        attention: AttentionKind::Uniform,
        pooling: GapMode::Magnitude,
    };
    assert!(System::new(base_net(), bad).is_err());
    assert!(System::new(base_net(), SchemeConfig::with_default_attention(SchemeKind::Iterative { n: 0 })).is_err());
}

fn aggregated_error(kind: SchemeKind, attention: AttentionKind, domain: Domain, seed: u64) -> f64 {
    let sys = system(kind, attention);
    let p = random_params(&sys, seed);
    let masks = mask_ops(sys.scheme.n_branch_inputs(), 0.8, [8, 8], domain);
    let z = random_features([2, 8, 8], seed + 100);
    let input = input_for(&sys, &z, &masks);
    let pass = sys.forward(&p, &input, RunOptions::linear()).unwrap();
    let u = extract_basis(&sys.net, &p[..sys.base_len()], None, [8, 8], DEFAULT_DENSE_CAP).unwrap();
    let agg = aggregated_basis(&sys, &p, &pass, &u, &masks).unwrap();
    agg.reconstruct(&z).unwrap().relative_error(&pass.output)
}

#[test]
fn aggregated_bases_reproduce_linear_outputs() {
    let cases = [
        (SchemeKind::Baseline, AttentionKind::Mlp),
        (SchemeKind::Bootstrap { n: 3, keep_ratio: 0.8 }, AttentionKind::Mlp),
        (SchemeKind::Bootstrap { n: 2, keep_ratio: 0.8 }, AttentionKind::Uniform),
        (SchemeKind::Residual, AttentionKind::Mlp),
        (SchemeKind::Residual, AttentionKind::Conv1x1),
        (SchemeKind::Iterative { n: 2 }, AttentionKind::Mlp),
        (SchemeKind::Iterative { n: 3 }, AttentionKind::Conv1x1),
    ];
    for (i, (kind, att)) in cases.into_iter().enumerate() {
        for domain in [Domain::Image, Domain::Kspace] {
            let e = aggregated_error(kind, att, domain, i as u64);
            assert!(e <= 1e-9, "{kind:?} {att:?} {domain:?}: {e}");
        }
    }
}

/// Central differences of `⟨v, u⟩` on random coordinates; probes that flip
/// any ReLU pattern are skipped.
fn fd_check(sys: &System, p: &[f64], input: &SystemInput, seed: u64) -> (f64, usize) {
    let pass = sys.forward(p, input, RunOptions::default()).unwrap();
    let u = random_features(pass.output.shape(), seed);
    let mut grads = vec![0.0; p.len()];
    sys.backward(p, &pass, &u, &mut grads).unwrap();
    let pattern = pass.pattern();
    let mut rng = Seed(seed).rng();
    let (mut worst, mut used) = (0.0f64, 0);
    let h = 1e-5;
    let mut coords: Vec<usize> = sample(&mut rng, sys.base_len(), 24).into_vec();
    coords.extend(sample(&mut rng, sys.head_len(), 8.min(sys.head_len())).iter().map(|k| k + sys.base_len()));
    for k in coords {
        let mut q = p.to_vec();
        q[k] += h;
        let plus = sys.forward(&q, input, RunOptions::default()).unwrap();
        q[k] -= 2.0 * h;
        let minus = sys.forward(&q, input, RunOptions::default()).unwrap();
        if plus.pattern() != pattern || minus.pattern() != pattern {
            continue;
        }
        let fd = (plus.output.dot(&u) - minus.output.dot(&u)) / (2.0 * h);
        worst = worst.max((grads[k] - fd).abs() / grads[k].abs().max(fd.abs()).max(1e-12));
        used += 1;
    }
    (worst, used)
}

#[test]
fn scheme_gradients_match_finite_differences() {
    let cases = [
        (SchemeKind::Baseline, AttentionKind::Mlp),
        (SchemeKind::Bootstrap { n: 3, keep_ratio: 0.8 }, AttentionKind::Mlp),
        (SchemeKind::Bootstrap { n: 2, keep_ratio: 0.8 }, AttentionKind::Uniform),
        (SchemeKind::Residual, AttentionKind::Conv1x1),
        (SchemeKind::Residual, AttentionKind::Mlp),
        (SchemeKind::Iterative { n: 3 }, AttentionKind::Conv1x1),
        (SchemeKind::Iterative { n: 2 }, AttentionKind::Mlp),
    ];
    let masks = mask_ops(3, 0.8, [8, 8], Domain::Image);
    for (i, (kind, att)) in cases.into_iter().enumerate() {
        let sys = system(kind, att);
        let p = random_params(&sys, 40 + i as u64);
        let z = random_features([2, 8, 8], 50 + i as u64);
        let input = input_for(&sys, &z, &masks);
        let (e, used) = fd_check(&sys, &p, &input, 60 + i as u64);
        assert!(e <= 1e-5, "{kind:?} {att:?}: {e}");
        assert!(used >= 20, "{kind:?}: only {used} probes");
    }
}

#[test]
fn overhead_figures() {
    let conv2 = param_overhead(AttentionKind::Conv1x1, 2, 16, 25_150_000);
    assert_eq!(conv2.count, 2080);
    assert_eq!(conv2.deviation, Some(0));
    let mlp = param_overhead(AttentionKind::Mlp, 10, 16, 25_150_000);
    assert_eq!((mlp.count, mlp.reference, mlp.deviation), (1354, Some(1355), Some(1)));
    let conv4 = param_overhead(AttentionKind::Conv1x1, 4, 16, 25_150_000);
    assert_eq!((conv4.count, conv4.reference, conv4.deviation), (4128, Some(4160), Some(32)));
    for o in [conv2, mlp, conv4] {
        assert!(o.percent < 0.02, "{o:?}");
    }
    assert_eq!(param_overhead(AttentionKind::Uniform, 4, 4, 100).count, 0);
    let sys = system(SchemeKind::Iterative { n: 4 }, AttentionKind::Conv1x1);
    assert_eq!(sys.head_len(), param_overhead(AttentionKind::Conv1x1, 4, 1, 0).count);
}

fn planar_base() -> Network {
    use crate::net::{LayerKind, NetworkSpec};
    Network::new(
        NetworkSpec::new(
            2,
            vec![
                LayerKind::conv1x1(3),
                LayerKind::Relu,
                LayerKind::conv1x1(2),
            ],
            2,
        )
        .unwrap(),
    )
    .unwrap()
}

#[test]
fn aggregated_census_refines_branches() {
    for trial in 0..10u64 {
        let sys = System::new(
            planar_base(),
            SchemeConfig::with_default_attention(SchemeKind::Iterative { n: 3 }),
        )
        .unwrap();
        let p = random_params(&sys, trial);
        let probes = Probes::Random { count: 200, seed: trial };
        let whole = SystemPatterns {
            system: &sys,
            params: &p,
            extents: [1, 1],
            masks: &[],
            branch: None,
        };
        let c = region_census(&whole, &probes).unwrap();
        assert_eq!(whole.n_neurons().unwrap(), 9);
        assert!(c.within_bound());
        for b in 0..3 {
            let one = SystemPatterns { branch: Some(b), ..whole.clone() };
            assert!(c.count >= region_census(&one, &probes).unwrap().count);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn mlp_weights_stay_in_open_unit_interval(seed in 0u64..10_000, n in 1usize..6) {
        let mlp = AttentionMlp { n };
        let mut rng = Seed(seed).rng();
        let p: Vec<f64> = (0..mlp.n_params()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let c = mlp.forward(&p, &g).unwrap();
        for (w, a) in c.weights.iter().zip(&c.logits) {
            // beyond |a| ≈ 36.7 the sigmoid rounds to exactly 0 or 1 in f64
            if a.abs() < 36.0 {
                prop_assert!(*w > 0.0 && *w < 1.0);
            } else {
                prop_assert!((0.0..=1.0).contains(w));
            }
        }
    }
}
