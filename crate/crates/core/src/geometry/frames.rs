use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::basis::{extract_basis, forward_identity_error};
use super::dense::{check_cap, unit};
use crate::error::{ensure, Error, Result};
use crate::net::{
    avg_pool, haar_pool, haar_unpool, zero_insert, JoinMode, LayerKind, LayerParams, Network, NetworkSpec,
};
use crate::tensor::{ConvShape, Features, Seed};

/// Pooling used between the filter layers of a frame-constructed network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum FramePooling {
    /// `Φ = Φ̃ = I`; forces `α = 1`.
    Identity,
    /// Orthonormal Haar analysis over `factor` blocks (entries 1 or 2).
    Haar { factor: [usize; 2] },
}

/// One analysis/synthesis pair at a single level.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameConfig {
    pub q_in: usize,
    pub q_out: usize,
    pub kernel: [usize; 2],
    pub alpha: f64,
    pub skip: bool,
    pub pooling: FramePooling,
    /// Spatial extents on which `Φ`, `Φ̃` are materialized.
    pub grid: [usize; 2],
}

/// Filter and pooling pairs. `psi` is `(r·q_in) × q_out` with row `j·r + k`
/// holding tap `k` of input channel `j`; `phi` is stored so that `phiᵀ` is
/// the encoder pooling map on one channel and `phi_tilde` the decoder map.
#[derive(Clone, Debug)]
pub struct FramePair {
    pub psi: DMatrix<f64>,
    pub psi_tilde: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub phi_tilde: DMatrix<f64>,
    pub c: f64,
    pub alpha: f64,
}

/// `1/(rα)`, or `1/(r(α+1))` when the level has an additive skip.
pub fn frame_constant(taps: usize, alpha: f64, skip: bool) -> f64 {
    let a = if skip { alpha + 1.0 } else { alpha };
    1.0 / (taps as f64 * a)
}

fn random_orthogonal(n: usize, seed: Seed) -> DMatrix<f64> {
    let mut rng = seed.rng();
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn operator(input: [usize; 3], f: impl Fn(&Features) -> Features) -> DMatrix<f64> {
    let n: usize = input.iter().product();
    let cols: Vec<Vec<f64>> = (0..n).map(|j| f(&unit(input, j)).data).collect();
    let m = cols.first().map_or(0, Vec::len);
    DMatrix::from_fn(m, n, |r, c| cols[c][r])
}

fn pooling_pair(pooling: FramePooling, grid: [usize; 2], alpha: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    match pooling {
        FramePooling::Identity => {
            ensure!(
                (alpha - 1.0).abs() <= f64::EPSILON,
                InvalidArgument,
                "identity pooling requires alpha = 1, got {alpha}"
            );
            let n = grid[0] * grid[1];
            Ok((DMatrix::identity(n, n), DMatrix::identity(n, n)))
        }
        FramePooling::Haar { factor } => {
            ensure!(
                factor.iter().all(|&f| f == 1 || f == 2) && factor != [1, 1],
                InvalidArgument,
                "Haar factor {factor:?} must use 1 or 2 per axis"
            );
            ensure!(
                grid[0] % factor[0] == 0 && grid[1] % factor[1] == 0,
                Shape,
                "grid {grid:?} not divisible by {factor:?}"
            );
            let bands = factor[0] * factor[1];
            let pool = operator([1, grid[0], grid[1]], |x| haar_pool(x, factor, 1.0));
            let unpool = operator([bands, grid[0] / factor[0], grid[1] / factor[1]], |x| {
                haar_unpool(x, factor, alpha)
            });
            Ok((pool.transpose(), unpool))
        }
    }
}

/// Random filter pair with `ΨΨ̃ᵀ = cI` and a pooling pair with `Φ̃Φᵀ = αI`.
pub fn build_frame_filters(cfg: &FrameConfig, seed: Seed) -> Result<FramePair> {
    let taps = cfg.kernel[0] * cfg.kernel[1];
    ensure!(taps > 0 && cfg.q_in > 0, InvalidArgument, "empty filter");
    ensure!(cfg.alpha > 0.0 && cfg.alpha.is_finite(), InvalidArgument, "alpha must be positive");
    if cfg.q_out < taps * cfg.q_in {
        return Err(Error::Infeasible(format!(
            "q_out = {} < r·q_in = {}",
            cfg.q_out,
            taps * cfg.q_in
        )));
    }
    let q = random_orthogonal(cfg.q_out, seed);
    let psi = q.rows(0, taps * cfg.q_in).into_owned();
    let c = frame_constant(taps, cfg.alpha, cfg.skip);
    let psi_tilde = &psi * c;
    let (phi, phi_tilde) = pooling_pair(cfg.pooling, cfg.grid, cfg.alpha)?;
    Ok(FramePair {
        psi,
        psi_tilde,
        phi,
        phi_tilde,
        c,
        alpha: cfg.alpha,
    })
}

/// Decoder kernel extents: odd extents are kept, even ones padded by one so
/// the flipped taps stay centred on the anchor.
pub fn synthesis_kernel(kernel: [usize; 2]) -> [usize; 2] {
    kernel.map(|r| if r % 2 == 0 { r + 1 } else { r })
}

/// Tap index in the synthesis kernel that carries analysis tap `k`.
fn flipped(k: usize, r: usize) -> usize {
    r - 1 - k
}

/// Analysis taps `[out = i][in = j][k]` from `Ψ`.
pub fn analysis_taps(psi: &DMatrix<f64>, q_in: usize, kernel: [usize; 2]) -> Vec<f64> {
    let shape = ConvShape {
        q_out: psi.ncols(),
        q_in,
        kernel,
    };
    let r = kernel[0] * kernel[1];
    let mut w = vec![0.0; shape.weight_len()];
    for i in 0..shape.q_out {
        for j in 0..q_in {
            for k1 in 0..kernel[0] {
                for k2 in 0..kernel[1] {
                    w[shape.index(i, j, k1, k2)] = psi[(j * r + k1 * kernel[1] + k2, i)];
                }
            }
        }
    }
    w
}

/// Synthesis taps `[out = j][in = i][k']` realizing the adjoint of the
/// analysis convolution scaled by `Ψ̃`.
pub fn synthesis_taps(psi_tilde: &DMatrix<f64>, q_in: usize, kernel: [usize; 2]) -> Vec<f64> {
    let big = synthesis_kernel(kernel);
    let shape = ConvShape {
        q_out: q_in,
        q_in: psi_tilde.ncols(),
        kernel: big,
    };
    let r = kernel[0] * kernel[1];
    let mut w = vec![0.0; shape.weight_len()];
    for i in 0..shape.q_in {
        for j in 0..q_in {
            for k1 in 0..kernel[0] {
                for k2 in 0..kernel[1] {
                    let idx = shape.index(j, i, flipped(k1, kernel[0]), flipped(k2, kernel[1]));
                    w[idx] = psi_tilde[(j * r + k1 * kernel[1] + k2, i)];
                }
            }
        }
    }
    w
}

/// Linear encoder-decoder assembled from frame pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameNetConfig {
    pub levels: usize,
    pub q_in: usize,
    pub kernel: [usize; 2],
    /// Filters added beyond the minimal `r·q` at every level.
    pub redundancy: usize,
    pub alpha: f64,
    pub skip: bool,
    pub pooling: FramePooling,
}

#[derive(Clone, Debug)]
pub struct FrameNet {
    pub net: Network,
    pub params: Vec<f64>,
    pub pairs: Vec<FramePair>,
}

/// Per level: `conv Ψ → [emit] → pool` on the way down and
/// `unpool → [add skip] → conv Ψ̃` on the way up; no biases, no ReLU.
pub fn build_frame_net(cfg: &FrameNetConfig, extents: [usize; 2], seed: Seed) -> Result<FrameNet> {
    ensure!(cfg.levels >= 1, InvalidArgument, "at least one level required");
    let taps = cfg.kernel[0] * cfg.kernel[1];
    let bands = match cfg.pooling {
        FramePooling::Identity => 1,
        FramePooling::Haar { factor } => factor[0] * factor[1],
    };
    let mut pairs = Vec::with_capacity(cfg.levels);
    let mut q = cfg.q_in;
    let mut grid = extents;
    let mut enc = Vec::new();
    let mut dec = Vec::new();
    for l in 0..cfg.levels {
        let q_out = taps * q + cfg.redundancy;
        let frame = FrameConfig {
            q_in: q,
            q_out,
            kernel: cfg.kernel,
            alpha: cfg.alpha,
            skip: cfg.skip,
            pooling: cfg.pooling,
            grid,
        };
        pairs.push(build_frame_filters(&frame, seed.child(l as u64))?);
        let tag = format!("f{l}");
        enc.push(LayerKind::Conv {
            kernel: cfg.kernel,
            out: q_out,
            bias: false,
        });
        let mut up = Vec::new();
        if cfg.skip {
            enc.push(LayerKind::emit(&tag));
        }
        if let FramePooling::Haar { factor } = cfg.pooling {
            enc.push(LayerKind::HaarPool { factor, gain: 1.0 });
            up.push(LayerKind::HaarUnpool {
                factor,
                gain: cfg.alpha,
            });
            grid = [grid[0] / factor[0], grid[1] / factor[1]];
        }
        if cfg.skip {
            up.push(LayerKind::join(&tag, JoinMode::Add));
        }
        up.push(LayerKind::Conv {
            kernel: synthesis_kernel(cfg.kernel),
            out: q,
            bias: false,
        });
        dec.push(up);
        q = bands * q_out;
    }
    let code_at = enc.len();
    let mut layers = enc;
    for up in dec.into_iter().rev() {
        layers.extend(up);
    }
    let net = Network::new(NetworkSpec::new(cfg.q_in, layers, code_at)?)?;
    net.spec.shapes(extents)?;

    let mut params = vec![0.0; net.n_params()];
    let convs: Vec<usize> = (0..net.spec.len())
        .filter(|&i| matches!(net.spec.layers[i], LayerKind::Conv { .. }))
        .collect();
    let n = cfg.levels;
    for (l, pair) in pairs.iter().enumerate() {
        let q_l = pair.psi.nrows() / taps;
        let a = analysis_taps(&pair.psi, q_l, cfg.kernel);
        let s = synthesis_taps(&pair.psi_tilde, q_l, cfg.kernel);
        for (layer, taps) in [(convs[l], a), (convs[2 * n - 1 - l], s)] {
            let LayerParams::Conv { weight, .. } = &net.layout.layers[layer] else {
                unreachable!("conv layer without weights")
            };
            params[weight.clone()].copy_from_slice(&taps);
        }
    }
    Ok(FrameNet { net, params, pairs })
}

/// How a reconstruction check was carried out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CheckRoute {
    /// Explicit `B̃Bᵀz` from the extracted basis.
    Basis,
    /// Forward passes only (input too large to materialize).
    MatrixFree,
}

#[derive(Clone, Debug, Serialize)]
pub struct PrCheck {
    pub probes: usize,
    pub max_error: f64,
    pub route: CheckRoute,
    pub tolerance: f64,
    pub pass: bool,
}

pub const PR_TOLERANCE: f64 = 1e-8;

/// Largest `‖Σᵢ⟨bᵢ,z⟩b̃ᵢ − z‖/‖z‖` over `probes` Gaussian inputs.
pub fn check_perfect_reconstruction(
    net: &Network,
    params: &[f64],
    extents: [usize; 2],
    probes: usize,
    seed: Seed,
    cap: usize,
) -> Result<PrCheck> {
    ensure!(!net.spec.has_relu(), Unsupported, "perfect reconstruction is a linear-mode property");
    ensure!(probes >= 1, InvalidArgument, "at least one probe required");
    let shape = [net.spec.input_channels, extents[0], extents[1]];
    let basis = if check_cap(shape.iter().product(), cap).is_ok() {
        Some(extract_basis(net, params, None, extents, cap)?)
    } else {
        None
    };
    let mut rng = seed.rng();
    let mut max_error: f64 = 0.0;
    for _ in 0..probes {
        let data = (0..shape.iter().product()).map(|_| rng.sample(StandardNormal)).collect();
        let z = Features::new(shape[0], shape[1], shape[2], data)?;
        let e = match &basis {
            Some(b) => {
                let v = b.reconstruct(&z)?;
                ensure!(v.shape() == z.shape(), Shape, "output {:?} differs from input", v.shape());
                v.relative_error(&z)
            }
            None => forward_identity_error(net, params, &z)?,
        };
        max_error = max_error.max(e);
    }
    Ok(PrCheck {
        probes,
        max_error,
        route: if basis.is_some() { CheckRoute::Basis } else { CheckRoute::MatrixFree },
        tolerance: PR_TOLERANCE,
        pass: max_error <= PR_TOLERANCE,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct FilterResidual {
    pub encoder_layer: usize,
    pub decoder_layer: usize,
    /// Best-fit `c = tr(ΨΨ̃ᵀ)/(r·q_in)`.
    pub c: f64,
    /// `‖ΨΨ̃ᵀ − cI‖_F`.
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PoolResidual {
    pub encoder_layer: usize,
    pub decoder_layer: usize,
    pub kind: String,
    /// Best-fit `α` of `Φ̃Φᵀ` (`m × m`).
    pub alpha: f64,
    /// `‖Φ̃Φᵀ − αI‖_F`.
    pub residual: f64,
    /// For rectangular pairs, best-fit scale and residual of `ΦᵀΦ̃`, the
    /// product defined on the coarse grid.
    pub coarse_alpha: Option<f64>,
    pub coarse_residual: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelReport {
    pub level: usize,
    pub filter: Option<FilterResidual>,
    pub pooling: Option<PoolResidual>,
    pub skip: bool,
    /// `r·c·(α + skip)`; equals 1 under the frame conditions.
    pub pr_gain: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FrameReport {
    pub levels: Vec<LevelReport>,
    pub tolerance: f64,
    pub pass: bool,
}

fn scaled_identity_fit(m: &DMatrix<f64>) -> (f64, f64) {
    let n = m.nrows();
    let s = m.trace() / n as f64;
    let r = (m - DMatrix::<f64>::identity(n, n) * s).norm();
    (s, r)
}

fn conv_shape(net: &Network, layer: usize) -> Option<ConvShape> {
    match &net.layout.layers[layer] {
        LayerParams::Conv { shape, .. } => Some(*shape),
        _ => None,
    }
}

fn filter_residual(net: &Network, params: &[f64], enc: usize, dec: usize) -> Option<FilterResidual> {
    let (LayerParams::Conv { shape: es, weight: ew, .. }, LayerParams::Conv { shape: ds, weight: dw, .. }) =
        (&net.layout.layers[enc], &net.layout.layers[dec])
    else {
        return None;
    };
    if ds.q_in != es.q_out || ds.q_out != es.q_in || ds.kernel != synthesis_kernel(es.kernel) && ds.kernel != es.kernel {
        return None;
    }
    let r = es.kernel[0] * es.kernel[1];
    let rows = r * es.q_in;
    let (ew, dw) = (&params[ew.clone()], &params[dw.clone()]);
    let ea = es.anchor();
    let da = ds.anchor();
    let mut psi = DMatrix::zeros(rows, es.q_out);
    let mut psi_t = DMatrix::zeros(rows, es.q_out);
    for i in 0..es.q_out {
        for j in 0..es.q_in {
            for k1 in 0..es.kernel[0] {
                for k2 in 0..es.kernel[1] {
                    let row = j * r + k1 * es.kernel[1] + k2;
                    psi[(row, i)] = ew[es.index(i, j, k1, k2)];
                    let (d1, d2) = ((ea[0] + da[0]).checked_sub(k1)?, (ea[1] + da[1]).checked_sub(k2)?);
                    if d1 >= ds.kernel[0] || d2 >= ds.kernel[1] {
                        return None;
                    }
                    psi_t[(row, i)] = dw[ds.index(j, i, d1, d2)];
                }
            }
        }
    }
    let (c, residual) = scaled_identity_fit(&(&psi * psi_t.transpose()));
    Some(FilterResidual {
        encoder_layer: enc,
        decoder_layer: dec,
        c,
        residual,
    })
}

fn pool_residual(net: &Network, enc: usize, dec: usize, extents: [usize; 2]) -> Result<Option<PoolResidual>> {
    let shape = net.spec.input_shape_of(enc, extents)?;
    let grid = [shape[1], shape[2]];
    let (kind, pool, unpool) = match (&net.spec.layers[enc], &net.spec.layers[dec]) {
        (LayerKind::HaarPool { factor, gain }, LayerKind::HaarUnpool { factor: f2, gain: g2 }) if factor == f2 => {
            let coarse = [factor[0] * factor[1], grid[0] / factor[0], grid[1] / factor[1]];
            (
                "haar",
                operator([1, grid[0], grid[1]], |x| haar_pool(x, *factor, *gain)),
                operator(coarse, |x| haar_unpool(x, *factor, *g2)),
            )
        }
        (LayerKind::AvgPool { factor }, LayerKind::UnpoolDeconv { factor: f2, .. }) if factor == f2 => {
            let coarse = [1, grid[0] / factor[0], grid[1] / factor[1]];
            (
                "average/zero-insert",
                operator([1, grid[0], grid[1]], |x| avg_pool(x, *factor)),
                operator(coarse, |x| zero_insert(x, *factor)),
            )
        }
        _ => return Ok(None),
    };
    let (alpha, residual) = scaled_identity_fit(&(&unpool * &pool));
    let (coarse_alpha, coarse_residual) = if pool.nrows() == pool.ncols() {
        (None, None)
    } else {
        let (a, r) = scaled_identity_fit(&(&pool * &unpool));
        (Some(a), Some(r))
    };
    Ok(Some(PoolResidual {
        encoder_layer: enc,
        decoder_layer: dec,
        kind: kind.into(),
        alpha,
        residual,
        coarse_alpha,
        coarse_residual,
    }))
}

/// Frame residuals of mirror-paired layers: the `i`-th encoder convolution
/// with the `i`-th decoder convolution from the end, and likewise for
/// pooling/unpooling.
pub fn frame_report(net: &Network, params: &[f64], extents: [usize; 2], tolerance: f64) -> Result<FrameReport> {
    let split = net.spec.code_at;
    let n = net.spec.len();
    let layers = &net.spec.layers;
    let is_conv = |i: &usize| matches!(layers[*i], LayerKind::Conv { .. });
    let is_pool = |i: &usize| matches!(layers[*i], LayerKind::AvgPool { .. } | LayerKind::HaarPool { .. });
    let is_unpool = |i: &usize| matches!(layers[*i], LayerKind::UnpoolDeconv { .. } | LayerKind::HaarUnpool { .. });
    let enc_convs: Vec<usize> = (0..split).filter(is_conv).collect();
    let dec_convs: Vec<usize> = (split..n).filter(is_conv).collect();
    let enc_pools: Vec<usize> = (0..split).filter(is_pool).collect();
    let dec_unpools: Vec<usize> = (split..n).filter(is_unpool).collect();

    let mut levels = Vec::new();
    for l in 0..enc_convs.len() {
        let enc = enc_convs[l];
        let filter = (dec_convs.len() == enc_convs.len())
            .then(|| filter_residual(net, params, enc, dec_convs[dec_convs.len() - 1 - l]))
            .flatten();
        let pooling = if enc_pools.len() == dec_unpools.len() && l < enc_pools.len() {
            pool_residual(net, enc_pools[l], dec_unpools[dec_unpools.len() - 1 - l], extents)?
        } else {
            None
        };
        let next = enc_convs.get(l + 1).copied().unwrap_or(split);
        let skip = (enc..next).any(|i| match &layers[i] {
            LayerKind::SkipEmit { tag } => layers[split..]
                .iter()
                .any(|j| matches!(j, LayerKind::SkipJoin { tag: t, mode: JoinMode::Add } if t == tag)),
            _ => false,
        });
        let alpha = match (&pooling, enc_pools.is_empty()) {
            (Some(p), _) => Some(p.alpha),
            (None, true) => Some(1.0),
            (None, false) => None,
        };
        let pr_gain = match (&filter, alpha, conv_shape(net, enc)) {
            (Some(f), Some(a), Some(s)) => {
                Some((s.kernel[0] * s.kernel[1]) as f64 * f.c * (a + if skip { 1.0 } else { 0.0 }))
            }
            _ => None,
        };
        levels.push(LevelReport {
            level: l,
            filter,
            pooling,
            skip,
            pr_gain,
        });
    }
    let pass = !levels.is_empty()
        && levels.iter().all(|lv| {
            lv.filter.as_ref().is_some_and(|f| f.residual <= tolerance)
                && lv.pooling.as_ref().is_none_or(|p| p.residual <= tolerance)
                && lv.pr_gain.is_some_and(|g| (g - 1.0).abs() <= tolerance)
        });
    Ok(FrameReport {
        levels,
        tolerance,
        pass,
    })
}
