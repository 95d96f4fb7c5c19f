//! Ridge-regularized least squares through the normal equations.

use nalgebra::{ComplexField, DMatrix, DVector};

use super::C64;
use crate::error::{ensure, Error, Result};

fn solve_normal<T: ComplexField<RealField = f64> + Copy>(a: &DMatrix<T>, b: &DMatrix<T>, ridge: f64) -> Result<DMatrix<T>> {
    ensure!(a.nrows() > 0 && a.ncols() > 0, Shape, "empty system matrix");
    ensure!(
        a.nrows() == b.nrows(),
        Shape,
        "matrix has {} rows, right-hand side has {}",
        a.nrows(),
        b.nrows()
    );
    ensure!(ridge >= 0.0 && ridge.is_finite(), InvalidArgument, "ridge must be finite and nonnegative, got {ridge}");
    let ah = a.adjoint();
    let mut g = &ah * a;
    for i in 0..g.nrows() {
        g[(i, i)] += T::from_real(ridge);
    }
    let rhs = &ah * b;
    let scale = (0..g.nrows()).map(|i| g[(i, i)].real()).fold(0.0, f64::max);
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::Singular("normal matrix is not positive definite".into()))?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows()).map(|i| l[(i, i)].real().powi(2)).fold(f64::INFINITY, f64::min);
    if min_pivot <= 1e-14 * scale {
        return Err(Error::Singular(format!(
            "normal matrix pivot {min_pivot:.3e} vs scale {scale:.3e}"
        )));
    }
    Ok(chol.solve(&rhs))
}

/// Minimizes `‖Ax − b‖² + ridge·‖x‖²` over complex `x`.
pub fn lstsq(a: &DMatrix<C64>, b: &DVector<C64>, ridge: f64) -> Result<DVector<C64>> {
    let bm = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let x = solve_normal(a, &bm, ridge)?;
    Ok(x.column(0).into_owned())
}

/// Solves one ridge problem per column of `b` with a shared factorization.
pub fn lstsq_multi(a: &DMatrix<C64>, b: &DMatrix<C64>, ridge: f64) -> Result<DMatrix<C64>> {
    solve_normal(a, b, ridge)
}

pub fn lstsq_real(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Result<DVector<f64>> {
    let bm = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let x = solve_normal(a, &bm, ridge)?;
    Ok(x.column(0).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_system() {
        let a = DMatrix::<f64>::identity(3, 3);
        let b = DVector::from_vec(vec![1.5, -2.0, 4.0]);
        let x = lstsq_real(&a, &b, 0.0).unwrap();
        assert!((x - b).norm() < 1e-14);
    }

    #[test]
    fn mean_minimizes_residual() {
        let a = DMatrix::from_vec(2, 1, vec![1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 3.0]);
        let x = lstsq_real(&a, &b, 0.0).unwrap()[0];
        // grid scan oracle
        let best = (0..=4000)
            .map(|i| i as f64 * 1e-3)
            .min_by(|p, q| {
                let r = |t: f64| (t - 1.0).powi(2) + (t - 3.0).powi(2);
                r(*p).total_cmp(&r(*q))
            })
            .unwrap();
        assert!((x - 2.0).abs() < 1e-14);
        assert!((best - 2.0).abs() < 1e-9);
    }

    #[test]
    fn ridge_shrinks_monotonically() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, -1.0, 3.0, 0.25]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let mut prev = f64::INFINITY;
        for k in -6..8 {
            let n = lstsq_real(&a, &b, 10f64.powi(k)).unwrap().norm();
            assert!(n < prev);
            prev = n;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn complex_solution_and_errors() {
        let a = DMatrix::from_row_slice(2, 2, &[C64::new(1.0, 1.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 2.0)]);
        let x0 = DVector::from_vec(vec![C64::new(0.5, -1.0), C64::new(2.0, 0.25)]);
        let b = &a * &x0;
        assert!((lstsq(&a, &b, 0.0).unwrap() - x0).norm() < 1e-13);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            lstsq_real(&singular, &DVector::from_vec(vec![1.0, 1.0]), 0.0),
            Err(Error::Singular(_))
        ));
        assert!(lstsq_real(&singular, &DVector::from_vec(vec![1.0]), 0.0).is_err());
        assert!(lstsq_real(&singular, &DVector::from_vec(vec![1.0, 1.0]), 1e-3).is_ok());
    }
}
