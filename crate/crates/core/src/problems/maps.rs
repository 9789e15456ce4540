//! Analytic level maps with known Lipschitz constants.

use crate::oracle::LevelMap;
use crate::{linalg, Matrix, Vector};

/// Max of `|tanh''|`, attained at `tanh(t)² = 1/3`.
pub const TANH_CURVATURE: f64 = 0.769_800_358_919_501;

/// A level map together with `L_f` and `L_{∇f}`.
pub trait SmoothMap: LevelMap {
    fn lipschitz(&self) -> f64;
    fn grad_lipschitz(&self) -> f64;
}

#[derive(Debug, Clone)]
pub struct IdentityMap {
    pub dim: usize,
}

impl LevelMap for IdentityMap {
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn output_dim(&self) -> usize {
        self.dim
    }
    fn value(&self, z: &Vector) -> Vector {
        z.clone()
    }
    fn jacobian(&self, _z: &Vector) -> Matrix {
        Matrix::identity(self.dim, self.dim)
    }
}

impl SmoothMap for IdentityMap {
    fn lipschitz(&self) -> f64 {
        1.0
    }
    fn grad_lipschitz(&self) -> f64 {
        0.0
    }
}

/// `z ↦ Wz + c`.
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub w: Matrix,
    pub c: Vector,
}

impl LevelMap for AffineMap {
    fn input_dim(&self) -> usize {
        self.w.ncols()
    }
    fn output_dim(&self) -> usize {
        self.w.nrows()
    }
    fn value(&self, z: &Vector) -> Vector {
        &self.w * z + &self.c
    }
    fn jacobian(&self, _z: &Vector) -> Matrix {
        self.w.transpose()
    }
}

impl SmoothMap for AffineMap {
    fn lipschitz(&self) -> f64 {
        linalg::spectral_norm(&self.w)
    }
    fn grad_lipschitz(&self) -> f64 {
        0.0
    }
}

/// `z ↦ tanh(Wz + c)` elementwise.
#[derive(Debug, Clone)]
pub struct TanhAffineMap {
    pub w: Matrix,
    pub c: Vector,
}

impl LevelMap for TanhAffineMap {
    fn input_dim(&self) -> usize {
        self.w.ncols()
    }
    fn output_dim(&self) -> usize {
        self.w.nrows()
    }
    fn value(&self, z: &Vector) -> Vector {
        (&self.w * z + &self.c).map(f64::tanh)
    }
    fn jacobian(&self, z: &Vector) -> Matrix {
        let a = &self.w * z + &self.c;
        let mut jt = self.w.transpose();
        for (j, mut col) in jt.column_iter_mut().enumerate() {
            let t = a[j].tanh();
            col *= 1.0 - t * t;
        }
        jt
    }
}

impl SmoothMap for TanhAffineMap {
    fn lipschitz(&self) -> f64 {
        linalg::spectral_norm(&self.w)
    }
    fn grad_lipschitz(&self) -> f64 {
        let n = linalg::spectral_norm(&self.w);
        TANH_CURVATURE * n * n
    }
}

/// `z ↦ √(1 + ‖z − e‖²)`, a smooth convex risk head.
#[derive(Debug, Clone)]
pub struct SmoothNormHead {
    pub e: Vector,
}

impl LevelMap for SmoothNormHead {
    fn input_dim(&self) -> usize {
        self.e.len()
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn value(&self, z: &Vector) -> Vector {
        Vector::from_element(1, (1.0 + (z - &self.e).norm_squared()).sqrt())
    }
    fn jacobian(&self, z: &Vector) -> Matrix {
        let u = z - &self.e;
        let s = (1.0 + u.norm_squared()).sqrt();
        Matrix::from_column_slice(u.len(), 1, (u / s).as_slice())
    }
}

impl SmoothMap for SmoothNormHead {
    fn lipschitz(&self) -> f64 {
        1.0
    }
    fn grad_lipschitz(&self) -> f64 {
        1.0
    }
}

/// `z ↦ cᵀz + c₀`.
#[derive(Debug, Clone)]
pub struct LinearHead {
    pub c: Vector,
    pub c0: f64,
}

impl LevelMap for LinearHead {
    fn input_dim(&self) -> usize {
        self.c.len()
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn value(&self, z: &Vector) -> Vector {
        Vector::from_element(1, self.c.dot(z) + self.c0)
    }
    fn jacobian(&self, _z: &Vector) -> Matrix {
        Matrix::from_column_slice(self.c.len(), 1, self.c.as_slice())
    }
}

impl SmoothMap for LinearHead {
    fn lipschitz(&self) -> f64 {
        self.c.norm()
    }
    fn grad_lipschitz(&self) -> f64 {
        0.0
    }
}

/// `(x, y) ↦ ½‖x − a‖² + ½‖y − b‖² + xᵀCy`.
///
/// The value is not globally Lipschitz; [`SmoothMap::lipschitz`] reports the
/// gradient bound on the ball of radius [`QuadraticHead::RADIUS`] around the
/// origin.
#[derive(Debug, Clone)]
pub struct QuadraticHead {
    pub a: Vector,
    pub b: Vector,
    pub c: Matrix,
}

impl QuadraticHead {
    pub const RADIUS: f64 = 10.0;

    fn p(&self) -> usize {
        self.a.len()
    }

    pub fn grad_x(&self, x: &Vector, y: &Vector) -> Vector {
        x - &self.a + &self.c * y
    }

    pub fn grad_y(&self, x: &Vector, y: &Vector) -> Vector {
        y - &self.b + self.c.transpose() * x
    }
}

impl LevelMap for QuadraticHead {
    fn input_dim(&self) -> usize {
        self.a.len() + self.b.len()
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn value(&self, z: &Vector) -> Vector {
        let (x, y) = linalg::split(z, self.p());
        let v = 0.5 * (&x - &self.a).norm_squared() + 0.5 * (&y - &self.b).norm_squared() + x.dot(&(&self.c * &y));
        Vector::from_element(1, v)
    }
    fn jacobian(&self, z: &Vector) -> Matrix {
        let (x, y) = linalg::split(z, self.p());
        let g = linalg::concat(&self.grad_x(&x, &y), &self.grad_y(&x, &y));
        Matrix::from_column_slice(g.len(), 1, g.as_slice())
    }
}

impl SmoothMap for QuadraticHead {
    fn lipschitz(&self) -> f64 {
        let shift = linalg::concat(&self.a, &self.b).norm();
        self.grad_lipschitz() * Self::RADIUS + shift
    }
    fn grad_lipschitz(&self) -> f64 {
        1.0 + linalg::spectral_norm(&self.c)
    }
}
