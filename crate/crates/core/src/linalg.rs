//! Dense Cholesky factorization and triangular solves.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower-triangular `L` with `L L^T = a`.
///
/// Fails with the index and value of the first non-positive pivot.
pub fn cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky needs a square matrix");
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::Factorization { pivot: j, value: diag });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves `L^T x = b` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves `(L L^T) x = b`.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    solve_lower_transpose(l, &solve_lower(l, b))
}

/// Dot product in twice the working precision (compensated products and sums).
pub fn dot_compensated(u: &[f64], v: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for (a, b) in u.iter().zip(v) {
        let p = a * b;
        let pe = a.mul_add(*b, -p);
        let t = s + p;
        let z = t - s;
        c += (s - (t - z)) + (p - z) + pe;
        s = t;
    }
    s + c
}

/// Solves `A x = b` given the Cholesky factor of `A`, then applies `steps`
/// rounds of iterative refinement with compensated residuals.
pub fn cholesky_solve_refined(a: &DMatrix<f64>, l: &DMatrix<f64>, b: &DVector<f64>, steps: usize) -> DVector<f64> {
    let n = b.len();
    let mut x = cholesky_solve(l, b);
    let mut row = vec![0.0; n + 1];
    let mut coef = vec![1.0; n + 1];
    for _ in 0..steps {
        for (c, v) in coef.iter_mut().zip(x.iter()) {
            *c = -v;
        }
        let r = DVector::from_fn(n, |i, _| {
            for j in 0..n {
                row[j] = a[(i, j)];
            }
            row[n] = b[i];
            dot_compensated(&row, &coef)
        });
        x += cholesky_solve(l, &r);
    }
    x
}

/// Adds `value` to every diagonal entry.
pub fn add_diagonal(m: &mut DMatrix<f64>, value: f64) {
    for i in 0..m.nrows().min(m.ncols()) {
        m[(i, i)] += value;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_dot_survives_cancellation() {
        let u = [1e16, 1.0, -1e16];
        let v = [1.0, 1.0, 1.0];
        assert_eq!(dot_compensated(&u, &v), 1.0);
        assert_eq!(dot_compensated(&[0.1, 0.2], &[3.0, 4.0]), 0.1 * 3.0 + 0.2 * 4.0);
    }

    #[test]
    fn factorizes_and_solves() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0]);
        let l = cholesky(&a).unwrap();
        assert!((&l * l.transpose() - &a).norm() < 1e-12);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = cholesky_solve(&l, &b);
        assert!((&a * x - b).norm() < 1e-12);
    }

    #[test]
    fn reports_failing_pivot() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        match cholesky(&a) {
            Err(Error::Factorization { pivot, value }) => {
                assert_eq!(pivot, 1);
                assert!(value <= 0.0);
            }
            other => panic!("expected factorization error, got {other:?}"),
        }
        let neg = DMatrix::from_row_slice(1, 1, &[-2.0]);
        assert!(matches!(cholesky(&neg), Err(Error::Factorization { pivot: 0, .. })));
    }
}
