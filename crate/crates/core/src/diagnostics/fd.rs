//! Central finite differences.

use crate::{Matrix, Vector};

/// `∂f/∂x_i ≈ (f(x + h e_i) − f(x − h e_i)) / 2h`.
pub fn gradient(f: impl Fn(&Vector) -> f64, x: &Vector, h: f64) -> Vector {
    let mut g = Vector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let base = probe[i];
        probe[i] = base + h;
        let up = f(&probe);
        probe[i] = base - h;
        let down = f(&probe);
        probe[i] = base;
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

/// Transposed Jacobian of `f: R^n → R^m`, shape `n × m`.
pub fn jacobian_transposed(f: impl Fn(&Vector) -> Vector, x: &Vector, h: f64) -> Matrix {
    let m = f(x).len();
    let mut jt = Matrix::zeros(x.len(), m);
    let mut probe = x.clone();
    for i in 0..x.len() {
        let base = probe[i];
        probe[i] = base + h;
        let up = f(&probe);
        probe[i] = base - h;
        let down = f(&probe);
        probe[i] = base;
        let col = (up - down) / (2.0 * h);
        jt.row_mut(i).copy_from(&col.transpose());
    }
    jt
}
