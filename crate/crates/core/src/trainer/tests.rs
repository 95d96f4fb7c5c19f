use super::*;
use crate::expressivity::{AttentionKind, SchemeConfig, SchemeKind, System};
use crate::mri::{generate_dataset, DataConfig, Domain};
use crate::net::{build_unet, LayerKind, Network, NetworkSpec, UnetOptions};
use crate::tensor::Seed;

#[test]
fn loss_examples() {
    assert_eq!(loss(Loss::L2, &[0.0, 0.0], &[3.0, 4.0]).unwrap().0, 5.0);
    assert_eq!(loss(Loss::SquaredL2, &[0.0, 0.0], &[3.0, 4.0]).unwrap().0, 25.0);
    for kind in [Loss::L2, Loss::SquaredL2] {
        let (v, g) = loss(kind, &[1.0, -2.0], &[1.0, -2.0]).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }
    assert!(loss(Loss::L2, &[1.0], &[1.0, 2.0]).is_err());
    assert_eq!("squared-l2".parse::<Loss>().unwrap(), Loss::SquaredL2);
    assert!("l1".parse::<Loss>().is_err());
}

#[test]
fn l2_gradient_matches_finite_differences() {
    let target = [0.3, -1.2, 2.0, 0.7];
    let v = [1.1, 0.4, -0.5, 0.9];
    for kind in [Loss::L2, Loss::SquaredL2] {
        let (_, g) = loss(kind, &target, &v).unwrap();
        for i in 0..4 {
            let h = 1e-6;
            let (mut a, mut b) = (v, v);
            a[i] += h;
            b[i] -= h;
            let fd = (loss(kind, &target, &a).unwrap().0 - loss(kind, &target, &b).unwrap().0) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6, "{kind:?} coordinate {i}");
        }
    }
}

#[test]
fn adam_first_step_is_signed_lr() {
    let mut p = vec![1.0, 1.0, 1.0];
    let g = [3.0, -0.2, 50.0];
    let mut s = AdamState::new(3);
    adam_step(&mut p, &g, &mut s, 0.01).unwrap();
    for i in 0..3 {
        assert!((p[i] - (1.0 - 0.01 * g[i].signum())).abs() < 1e-8);
    }
}

#[test]
fn adam_zero_gradient_keeps_params() {
    let mut p = vec![0.5, -2.0];
    let mut s = AdamState::new(2);
    for _ in 0..10 {
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1).unwrap();
    }
    assert_eq!(p, vec![0.5, -2.0]);
    assert!(adam_step(&mut p, &[f64::NAN, 0.0], &mut s, 0.1).is_err());
}

#[test]
fn adam_constant_gradient_recurrence() {
    // m_t = g(1 - 0.9^t), v_t = g²(1 - 0.999^t); each step moves lr·g/(|g| + ε)
    let (g, lr) = (0.5, 0.1);
    let mut p = vec![2.0];
    let mut s = AdamState::new(1);
    let ms = [0.05, 0.095, 0.1355];
    let vs = [0.00025, 0.00049975, 0.00074925025];
    for t in 0..3 {
        adam_step(&mut p, &[g], &mut s, lr).unwrap();
        assert!((s.m[0] - ms[t]).abs() <= 1e-12);
        assert!((s.v[0] - vs[t]).abs() <= 1e-12);
        let expect = 2.0 - (t + 1) as f64 * lr * g / (g + 1e-8);
        assert!((p[0] - expect).abs() <= 1e-12);
    }
    assert_eq!(s.t, 3);
}

#[test]
fn schedule_halves_to_floor() {
    let lrs: Vec<f64> = (0..12).map(|e| learning_rate(1e-2, 3, 1e-3, e)).collect();
    assert_eq!(&lrs[..3], &[1e-2; 3]);
    assert_eq!(lrs[3], 5e-3);
    assert_eq!(lrs[6], 2.5e-3);
    assert_eq!(lrs[9], 1.25e-3);
    assert_eq!(learning_rate(1e-2, 3, 1e-3, 12), 1e-3);
    assert_eq!(learning_rate(1e-2, 1, 1e-4, 5000), 1e-4);
}

fn toy_data(n: usize, seed: u64) -> Vec<crate::mri::Sample> {
    let cfg = DataConfig {
        size: [32, 32],
        n_coils: 4,
        accel: [2, 2],
        acs: [6, 6],
        seed: Seed(seed),
        ..DataConfig::default()
    };
    generate_dataset(&cfg, 0, n).unwrap()
}

fn unet_system(scheme: SchemeConfig) -> System {
    let spec = build_unet(2, 4, 4, UnetOptions { convs_per_stage: 2, affine_bn: false }).unwrap();
    System::new(Network::new(spec).unwrap(), scheme).unwrap()
}

#[test]
fn config_validation() {
    let mut c = TrainConfig::default();
    c.validate().unwrap();
    c.floor = c.lr0;
    assert!(c.validate().is_err());
    c = TrainConfig { epochs: 0, ..TrainConfig::default() };
    assert!(c.validate().is_err());
}

#[test]
fn parameterless_net_has_constant_loss() {
    let sys = System::new(Network::new(NetworkSpec::new(8, vec![], 0).unwrap()).unwrap(), SchemeConfig::baseline()).unwrap();
    assert_eq!(sys.n_params(), 0);
    let data = toy_data(3, 1);
    let cfg = TrainConfig { epochs: 4, ..TrainConfig::default() };
    let out = train(&cfg, &sys, &data, &[]).unwrap();
    assert_eq!(out.log.len(), 4);
    assert!(out.log.iter().all(|m| m.train_loss == out.log[0].train_loss));
}

#[test]
fn training_is_deterministic() {
    let data = toy_data(3, 2);
    let val = toy_data(1, 99);
    for kind in [SchemeKind::Baseline, SchemeKind::Bootstrap { n: 2, keep_ratio: 0.8 }] {
        let sys = unet_system(SchemeConfig::with_default_attention(kind));
        let cfg = TrainConfig {
            scheme: sys.scheme,
            epochs: 2,
            seed: Seed(4),
            ..TrainConfig::default()
        };
        let a = train(&cfg, &sys, &data, &val).unwrap();
        let b = train(&cfg, &sys, &data, &val).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.params, b.params);
        assert!(a.to_csv().starts_with("epoch,lr,train_loss,val_psnr,val_ssim\n"));
    }
}

#[test]
fn toy_run_halves_the_loss() {
    let data = toy_data(8, 3);
    let sys = unet_system(SchemeConfig::baseline());
    let cfg = TrainConfig {
        lr0: 1e-3,
        epochs: 25,
        max_steps: Some(200),
        seed: Seed(5),
        zero_output_init: false,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &sys, &data, &[]).unwrap();
    assert_eq!(out.steps, 200);
    let first = out.log.first().unwrap().train_loss;
    let last = out.log.last().unwrap().train_loss;
    assert!(last <= 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn zero_output_init_starts_at_zero_filled() {
    let data = toy_data(8, 3);
    let sys = unet_system(SchemeConfig::baseline());
    let cfg = TrainConfig {
        epochs: 25,
        max_steps: Some(200),
        seed: Seed(5),
        ..TrainConfig::default()
    };
    assert!(cfg.zero_output_init);
    let p = initial_params(&cfg, &sys);
    let prep = prepare(&data[0], Domain::Image, SchemeKind::Baseline, true, Seed(0)).unwrap();
    let pass = sys.forward(&p, &prep.input, crate::net::RunOptions::default()).unwrap();
    assert_eq!(pass.output, prep.input.z);
    let out = train(&cfg, &sys, &data, &[]).unwrap();
    let tail: f64 = out.step_losses[192..].iter().sum::<f64>() / 8.0;
    let head: f64 = out.step_losses[..8].iter().sum::<f64>() / 8.0;
    assert!(tail < head, "loss {head} -> {tail}");
}

#[test]
fn kspace_domain_round_trips_through_scoring() {
    let data = toy_data(1, 6);
    let sys = unet_system(SchemeConfig::baseline());
    let params = vec![0.0; sys.n_params()];
    // zero network: T(z) = z, so the k-space system returns the zero-filled data
    let prep = prepare(&data[0], Domain::Kspace, SchemeKind::Baseline, true, Seed(0)).unwrap();
    let rec = reconstruct(&sys, &params, &prep, Domain::Kspace).unwrap();
    let zf = data[0].zero_filled_image().unwrap();
    assert!(rec.relative_error(&zf) < 1e-12);
    let (p, s, _) = score(&data[0].label_image().unwrap(), &data[0]).unwrap();
    assert_eq!(p, f64::INFINITY);
    assert_eq!(s, 1.0);
}

#[test]
fn normalization_uses_magnitude_std() {
    let data = toy_data(1, 7);
    let prep = prepare(&data[0], Domain::Image, SchemeKind::Baseline, true, Seed(0)).unwrap();
    let zf = data[0].zero_filled_image().unwrap();
    assert!((prep.scale - magnitude_std(&zf)).abs() < 1e-15);
    let re: f64 = zf.data()[0].re / prep.scale;
    assert!((prep.input.z.data[0] - re).abs() < 1e-15);
    let raw = prepare(&data[0], Domain::Image, SchemeKind::Baseline, false, Seed(0)).unwrap();
    assert_eq!(raw.scale, 1.0);
}

fn linear_system() -> System {
    let spec = NetworkSpec::new(8, vec![LayerKind::conv([3, 3], 8)], 1).unwrap();
    System::new(Network::new(spec).unwrap(), SchemeConfig::baseline()).unwrap()
}

#[test]
fn grad_check_linear_and_relu() {
    let data = toy_data(1, 8);
    let prep = prepare(&data[0], Domain::Image, SchemeKind::Baseline, true, Seed(0)).unwrap();
    let lin = linear_system();
    let p = lin.init(Seed(1));
    let r = grad_check(&lin, &p, &prep, Loss::SquaredL2, 32, Seed(2)).unwrap();
    assert_eq!(r.checked, 32);
    assert!(r.max_rel_error <= 1e-7, "{}", r.max_rel_error);

    for (kind, attention) in [
        (SchemeKind::Baseline, AttentionKind::Mlp),
        (SchemeKind::Residual, AttentionKind::Conv1x1),
        (SchemeKind::Bootstrap { n: 2, keep_ratio: 0.7 }, AttentionKind::Mlp),
    ] {
        let sys = unet_system(SchemeConfig { kind, attention, pooling: crate::expressivity::GapMode::Magnitude });
        let prep = prepare(&data[0], Domain::Image, kind, true, Seed(3)).unwrap();
        let p = sys.init(Seed(4));
        for l in [Loss::SquaredL2, Loss::L2] {
            let r = grad_check(&sys, &p, &prep, l, 32, Seed(5)).unwrap();
            assert!(r.checked >= 20);
            assert!(r.max_rel_error <= 1e-5, "{kind:?} {l:?}: {}", r.max_rel_error);
        }
    }
}

#[test]
fn boundary_probes_are_excluded() {
    // all pre-activations sit exactly at zero
    let spec = NetworkSpec::new(8, vec![LayerKind::conv1x1(3), LayerKind::Relu, LayerKind::conv1x1(8)], 2).unwrap();
    let sys = System::new(Network::new(spec).unwrap(), SchemeConfig::baseline()).unwrap();
    let mut p = sys.init(Seed(1));
    p[..8 * 3 + 3].iter_mut().for_each(|v| *v = 0.0);
    let data = toy_data(1, 9);
    let prep = prepare(&data[0], Domain::Image, SchemeKind::Baseline, true, Seed(0)).unwrap();
    let r = grad_check(&sys, &p, &prep, Loss::SquaredL2, sys.n_params(), Seed(2)).unwrap();
    assert!(r.excluded.iter().any(|&i| i >= 24 && i < 27), "{:?}", r.excluded);
    assert_eq!(r.checked + r.excluded.len(), sys.n_params());
}


#[test]
fn loss_difference_matches_direct_subtraction() {
    let t = [0.5, -1.0, 2.0];
    let u = [0.7, -0.2, 1.0];
    let d = [0.1, -1.5, 2.5];
    for kind in [Loss::L2, Loss::SquaredL2] {
        let direct = loss(kind, &t, &u).unwrap().0 - loss(kind, &t, &d).unwrap().0;
        assert!((loss_difference(kind, &t, &u, &d) - direct).abs() <= 1e-14);
    }
    assert_eq!(loss_difference(Loss::L2, &t, &t, &t), 0.0);
}
