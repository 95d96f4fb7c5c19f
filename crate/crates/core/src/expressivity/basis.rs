use nalgebra::{DMatrix, DVector};

use super::scheme::{HeadCache, SchemeKind, System, SystemPass};
use crate::error::{ensure, Result};
use crate::geometry::BasisDecomposition;
use crate::mri::{apply_forward, Domain, SamplingMask};
use crate::net::{channels_to_complex, complex_to_channels};
use crate::tensor::Features;

/// Concatenated atoms of an aggregated system, inputs augmented with a
/// trailing 1 as in [`BasisDecomposition`].
#[derive(Clone, Debug)]
pub struct AggregatedBasis {
    pub b: DMatrix<f64>,
    pub b_tilde: DMatrix<f64>,
    /// Atom count of every sub-basis, in candidate order (a trailing constant
    /// block holds the attention bias, when there is one).
    pub blocks: Vec<usize>,
}

impl AggregatedBasis {
    pub fn reconstruct(&self, z: &Features) -> Result<Features> {
        ensure!(z.len() + 1 == self.b.nrows(), Shape, "input length {} does not match basis", z.len());
        let v = &self.b_tilde * self.b.tr_mul(&BasisDecomposition::augment(z));
        Features::new(z.channels, z.height, z.width, v.data.into())
    }
}

/// `(B, B̃)` of `T = I + U` from the linear-mode basis of `U`:
/// `B_T = [[I; 0] B_U]`, `B̃_T = [I B̃_U]`.
pub fn residual_pair(u: &BasisDecomposition) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = u.input_dim();
    let (id_b, id_bt) = identity_pair(n);
    (hcat(&id_b, &u.b), hcat(&id_bt, &u.b_tilde))
}

fn identity_pair(n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut b = DMatrix::zeros(n + 1, n);
    b.view_mut((0, 0), (n, n)).fill_with_identity();
    (b, DMatrix::identity(n, n))
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    m.columns_mut(0, a.ncols()).copy_from(a);
    m.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    m
}

/// Augmented operator `[[A 0]; [0 1]]`.
fn augment_op(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(a);
    m[(n, n)] = 1.0;
    m
}

/// Real matrix of `z ↦ (domain view of) M ⊙ F(z)` on `[re…, im…]` channels.
pub fn mask_operator(mask: &SamplingMask, n_coils: usize, extents: [usize; 2], domain: Domain) -> Result<DMatrix<f64>> {
    mask.check_extents(extents)?;
    let n = 2 * n_coils * extents[0] * extents[1];
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = Features::zeros(2 * n_coils, extents[0], extents[1]);
        e.data[j] = 1.0;
        let x = channels_to_complex(&e)?;
        let k = match domain {
            Domain::Image => crate::mri::to_kspace(&x)?,
            Domain::Kspace => x,
        };
        let y = domain.from_kspace(&apply_forward(&k, mask)?)?;
        let col = complex_to_channels(&y)?;
        m.set_column(j, &DVector::from_vec(col.data));
    }
    Ok(m)
}

/// Candidate sub-bases `(B⁽ⁿ⁾, B̃⁽ⁿ⁾)` before attention mixing:
/// bootstrap `(M'ₙᵀ B_T, B̃_T)`, residual `([I; 0], I)` and `(B_U, B̃_U)`,
/// iterative `((Gⁿ⁻¹)ᵀ B_T, B̃_T)` with `G = [[B̃_T B_Tᵀ]; e_lastᵀ]`.
pub fn candidate_bases(
    system: &System,
    u: &BasisDecomposition,
    masks: &[DMatrix<f64>],
) -> Result<Vec<(DMatrix<f64>, DMatrix<f64>)>> {
    let n = u.input_dim();
    ensure!(u.b_tilde.nrows() == n, Shape, "base network must preserve dimension");
    let (bt, btt) = residual_pair(u);
    Ok(match system.scheme.kind {
        SchemeKind::Baseline => vec![(bt, btt)],
        SchemeKind::Bootstrap { n: k, .. } => {
            ensure!(masks.len() == k, InvalidArgument, "bootstrap basis needs {k} mask operators");
            masks.iter().map(|m| (augment_op(m).transpose() * &bt, btt.clone())).collect()
        }
        SchemeKind::Residual => vec![identity_pair(n), (u.b.clone(), u.b_tilde.clone())],
        SchemeKind::Iterative { n: k } => {
            let mut g = DMatrix::zeros(n + 1, n + 1);
            g.view_mut((0, 0), (n, n + 1)).copy_from(&(&btt * bt.transpose()));
            g[(n, n)] = 1.0;
            let mut power = DMatrix::identity(n + 1, n + 1);
            let mut out = Vec::with_capacity(k);
            for _ in 0..k {
                out.push((power.transpose() * &bt, btt.clone()));
                power = &g * power;
            }
            out
        }
    })
}

/// Aggregated basis of one system evaluation. Scalar heads scale each `B̃⁽ⁿ⁾`
/// by `wₙ(z)` taken from `pass`; the `1×1` head applies its channel-mixing
/// blocks and adds the bias as a constant atom.
pub fn aggregated_basis(
    system: &System,
    params: &[f64],
    pass: &SystemPass,
    u: &BasisDecomposition,
    masks: &[DMatrix<f64>],
) -> Result<AggregatedBasis> {
    let parts = candidate_bases(system, u, masks)?;
    let n = u.input_dim();
    let mut b_cols = Vec::new();
    let mut bt_cols = Vec::new();
    let mut blocks = Vec::new();
    match (&pass.head, system.attention_conv()) {
        (HeadCache::Conv { .. }, Some(conv)) => {
            let (_, att) = system.split(params);
            let plane = n / conv.channels;
            let id = DMatrix::<f64>::identity(plane, plane);
            for (i, (b, bt)) in parts.into_iter().enumerate() {
                let mix = conv.block(att, i).kronecker(&id);
                blocks.push(b.ncols());
                b_cols.push(b);
                bt_cols.push(mix * bt);
            }
            let mut e = DMatrix::zeros(n + 1, 1);
            e[(n, 0)] = 1.0;
            let bias: Vec<f64> = conv.bias(att).iter().flat_map(|&v| std::iter::repeat_n(v, plane)).collect();
            blocks.push(1);
            b_cols.push(e);
            bt_cols.push(DMatrix::from_vec(n, 1, bias));
        }
        _ => {
            let w = pass.weights().expect("scalar head");
            for ((b, bt), w) in parts.into_iter().zip(w) {
                blocks.push(b.ncols());
                b_cols.push(b);
                bt_cols.push(bt * w);
            }
        }
    }
    let total: usize = blocks.iter().sum();
    let mut b = DMatrix::zeros(n + 1, total);
    let mut b_tilde = DMatrix::zeros(n, total);
    let mut at = 0;
    for (x, y) in b_cols.iter().zip(&bt_cols) {
        b.columns_mut(at, x.ncols()).copy_from(x);
        b_tilde.columns_mut(at, y.ncols()).copy_from(y);
        at += x.ncols();
    }
    Ok(AggregatedBasis { b, b_tilde, blocks })
}
