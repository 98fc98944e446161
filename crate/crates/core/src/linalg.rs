//! Small dense helpers in 64-bit: Cholesky, triangular solves, power iteration.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension { expected: n, got: a.ncols() });
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let row_j = l.slice(s![j, ..j]).to_owned();
        let d = a[[j, j]] - row_j.dot(&row_j);
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Numerical(format!(
                "Cholesky pivot {j} is {d:e}; the matrix is not positive definite, try a larger sigma2"
            )));
        }
        let ljj = d.sqrt();
        l[[j, j]] = ljj;
        for i in j + 1..n {
            let v = a[[i, j]] - l.slice(s![i, ..j]).dot(&row_j);
            l[[i, j]] = v / ljj;
        }
    }
    Ok(l)
}

/// Solves `L X = B` for lower-triangular `L`.
pub fn solve_lower(l: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for i in 0..n {
        for k in 0..i {
            let lik = l[[i, k]];
            if lik != 0.0 {
                let (done, mut rest) = x.view_mut().split_at(Axis(0), i);
                rest.row_mut(0).scaled_add(-lik, &done.row(k));
            }
        }
        let d = l[[i, i]];
        x.row_mut(i).mapv_inplace(|v| v / d);
    }
    x
}

/// Solves `Lᵀ X = B` for lower-triangular `L`.
pub fn solve_lower_transpose(l: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for i in (0..n).rev() {
        for k in i + 1..n {
            let lki = l[[k, i]];
            if lki != 0.0 {
                let (mut head, tail) = x.view_mut().split_at(Axis(0), i + 1);
                head.row_mut(i).scaled_add(-lki, &tail.row(k - i - 1));
            }
        }
        let d = l[[i, i]];
        x.row_mut(i).mapv_inplace(|v| v / d);
    }
    x
}

/// Solves `(L Lᵀ) x = b`.
pub fn cholesky_solve(l: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let col = b.insert_axis(Axis(1));
    let y = solve_lower(l, col);
    solve_lower_transpose(l, y.view()).remove_axis(Axis(1))
}

/// Largest eigenvalue of a symmetric PSD operator given as a matrix-vector product.
///
/// Starts from the normalized all-ones vector and stops once successive Rayleigh
/// quotients agree to `tol` relative, or after `max_iter` steps.
pub fn power_iteration<F>(dim: usize, apply: F, tol: f64, max_iter: usize) -> f64
where
    F: Fn(&Array1<f64>) -> Array1<f64>,
{
    if dim == 0 {
        return 0.0;
    }
    let mut v = Array1::from_elem(dim, 1.0 / (dim as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = apply(&v);
        let next = v.dot(&w);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        let done = (next - lambda).abs() <= tol * next.abs();
        lambda = next;
        if done {
            break;
        }
    }
    lambda
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn cholesky_reconstructs() {
        let a = array![[4.0, 2.0, 0.4], [2.0, 5.0, 1.0], [0.4, 1.0, 3.0]];
        let l = cholesky(a.view()).unwrap();
        let back = l.dot(&l.t());
        for (x, y) in back.iter().zip(a.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(cholesky(a.view()), Err(Error::Numerical(_))));
    }

    #[test]
    fn triangular_solves() {
        let a = array![[4.0, 2.0, 0.4], [2.0, 5.0, 1.0], [0.4, 1.0, 3.0]];
        let l = cholesky(a.view()).unwrap();
        let b = array![1.0, -2.0, 0.5];
        let x = cholesky_solve(l.view(), b.view());
        let r = a.dot(&x) - &b;
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn power_iteration_diagonal() {
        let d = array![3.0, 1.0, 0.5];
        let lam = power_iteration(3, |v| &d * v, 1e-12, 10_000);
        assert_abs_diff_eq!(lam, 3.0, epsilon = 1e-9);
    }
}
