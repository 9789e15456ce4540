//! Small dense helpers on top of nalgebra.

use nalgebra::{Cholesky, SymmetricEigen};

use crate::{Matrix, Vector};

/// Solves `A s = b` for symmetric positive definite `A`.
pub fn spd_solve(a: &Matrix, b: &Vector) -> Option<Vector> {
    Cholesky::new(a.clone()).map(|c| c.solve(b))
}

/// `(λ_min, λ_max)` of a symmetric matrix.
pub fn eigen_range(a: &Matrix) -> (f64, f64) {
    if a.is_empty() {
        return (0.0, 0.0);
    }
    let eig = SymmetricEigen::new(a.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Largest singular value.
pub fn spectral_norm(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().svd(false, false).singular_values.max()
}

/// `(x, y)` stacked into one vector.
pub fn concat(x: &Vector, y: &Vector) -> Vector {
    let mut out = Vector::zeros(x.len() + y.len());
    out.rows_mut(0, x.len()).copy_from(x);
    out.rows_mut(x.len(), y.len()).copy_from(y);
    out
}

/// Splits a stacked vector at `p`.
pub fn split(v: &Vector, p: usize) -> (Vector, Vector) {
    let x = v.rows(0, p).into_owned();
    let y = v.rows(p, v.len() - p).into_owned();
    (x, y)
}

pub fn is_finite(v: &Vector) -> bool {
    v.iter().all(|e| e.is_finite())
}

/// A uniformly random orthogonal matrix from the QR factorization of a
/// Gaussian matrix (sign-corrected so the distribution is Haar).
pub fn random_orthogonal(n: usize, rng: &mut impl rand::Rng) -> Matrix {
    let g = Matrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col *= -1.0;
        }
    }
    q
}
