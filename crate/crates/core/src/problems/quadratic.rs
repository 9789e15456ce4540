//! Quadratic bilevel instances.
//!
//! ```text
//! Ψ(x, y) = ½‖x − a‖² + ½‖y − b‖² + xᵀCy
//! g(x, y) = ½ yᵀAy − xᵀBy
//! ```

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::maps::{QuadraticHead, SmoothMap};
use super::{InstanceDescriptor, ProblemError, ProblemSpec, SmoothnessConstants};
use crate::bilinasa::FeasibleSet;
use crate::linalg;
use crate::oracle::{CompositionLevel, LowerLevel, LowerObjective};
use crate::{Matrix, Vector};

/// `g(x, y) = ½ yᵀAy − xᵀBy` with `A` symmetric positive definite.
#[derive(Debug, Clone)]
pub struct QuadraticLower {
    /// `q × q`.
    pub a: Matrix,
    /// `p × q`.
    pub b: Matrix,
}

impl QuadraticLower {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self, ProblemError> {
        let q = a.nrows();
        if a.ncols() != q || b.ncols() != q {
            return Err(ProblemError::InvalidDimension(format!(
                "A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        if (&a - a.transpose()).norm() > 1e-12 * a.norm().max(1.0) {
            return Err(ProblemError::InvalidParameter("A must be symmetric".into()));
        }
        let (lo, _) = linalg::eigen_range(&a);
        if lo <= 0.0 {
            return Err(ProblemError::Singular);
        }
        Ok(Self { a, b })
    }

    /// `LowerLevel` with `μ_g = λ_min(A)`, `L_{∇g} = max(λ_max(A), ‖B‖)`,
    /// `L_{∇²g} = 0`.
    pub fn into_lower(self) -> LowerLevel {
        let (mu, hi) = linalg::eigen_range(&self.a);
        let l_grad = hi.max(linalg::spectral_norm(&self.b));
        LowerLevel {
            objective: Arc::new(self),
            mu_g: mu,
            l_grad,
            l_hess: 0.0,
        }
    }
}

impl LowerObjective for QuadraticLower {
    fn x_dim(&self) -> usize {
        self.b.nrows()
    }
    fn y_dim(&self) -> usize {
        self.a.nrows()
    }
    fn value(&self, x: &Vector, y: &Vector) -> f64 {
        0.5 * y.dot(&(&self.a * y)) - x.dot(&(&self.b * y))
    }
    fn grad_y(&self, x: &Vector, y: &Vector) -> Vector {
        &self.a * y - self.b.transpose() * x
    }
    fn cross(&self, _x: &Vector, _y: &Vector) -> Matrix {
        -&self.b
    }
    fn hess_yy(&self, _x: &Vector, _y: &Vector) -> Matrix {
        self.a.clone()
    }
    fn solve_y(&self, x: &Vector) -> Option<Vector> {
        linalg::spd_solve(&self.a, &(self.b.transpose() * x))
    }
}

/// Explicit coefficients of a quadratic instance.
#[derive(Debug, Clone)]
pub struct QuadraticParts {
    pub a: Vector,
    pub b: Vector,
    /// `p × q` coupling in the upper level.
    pub c: Matrix,
    /// Lower-level `A`, `q × q`.
    pub lower_a: Matrix,
    /// Lower-level `B`, `p × q`.
    pub lower_b: Matrix,
}

pub fn from_parts(id: &str, parts: QuadraticParts) -> Result<ProblemSpec, ProblemError> {
    let (p, q) = (parts.a.len(), parts.b.len());
    if parts.c.shape() != (p, q) || parts.lower_b.shape() != (p, q) || parts.lower_a.shape() != (q, q) {
        return Err(ProblemError::InvalidDimension(format!("inconsistent shapes for p = {p}, q = {q}")));
    }
    let head = QuadraticHead {
        a: parts.a,
        b: parts.b,
        c: parts.c,
    };
    let lower = QuadraticLower::new(parts.lower_a, parts.lower_b)?.into_lower();
    let constants = SmoothnessConstants::from_levels(
        vec![head.lipschitz()],
        vec![head.grad_lipschitz()],
        lower.mu_g,
        lower.l_grad,
        lower.l_hess,
    );
    let levels = vec![CompositionLevel::new(1, Arc::new(head))];
    ProblemSpec::new(
        id,
        levels,
        lower,
        FeasibleSet::Free,
        constants,
        InstanceDescriptor::Custom { name: id.to_string() },
    )
}

/// Symmetric positive definite `Q diag(1, …, κ) Qᵀ` with a random orthogonal `Q`.
pub fn conditioned_spd(q: usize, conditioning: f64, rng: &mut ChaCha8Rng) -> Result<Matrix, ProblemError> {
    if !(conditioning.is_finite() && conditioning >= 1.0) {
        return Err(ProblemError::InvalidConditioning(conditioning));
    }
    if q == 1 && conditioning != 1.0 {
        return Err(ProblemError::InvalidConditioning(conditioning));
    }
    let eig = Vector::from_fn(q, |i, _| {
        if q == 1 {
            1.0
        } else {
            1.0 + (conditioning - 1.0) * i as f64 / (q - 1) as f64
        }
    });
    let qm = linalg::random_orthogonal(q, rng);
    let a = &qm * Matrix::from_diagonal(&eig) * qm.transpose();
    Ok((&a + a.transpose()) * 0.5)
}

/// Random quadratic instance: `μ_g = 1`, `λ_max(A) = conditioning`.
pub fn make_quadratic_bilevel(p: usize, q: usize, conditioning: f64, seed: u64) -> Result<ProblemSpec, ProblemError> {
    if p == 0 || q == 0 {
        return Err(ProblemError::InvalidDimension(format!("p = {p}, q = {q}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lower_a = conditioned_spd(q, conditioning, &mut rng)?;
    let mut gauss = |r: usize, c: usize, scale: f64| Matrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
    let lower_b = gauss(p, q, 1.0 / (q as f64).sqrt());
    let c = gauss(p, q, 0.1);
    let a = gauss(p, 1, 1.0).column(0).into_owned();
    let b = gauss(q, 1, 1.0).column(0).into_owned();
    let descriptor = InstanceDescriptor::Quadratic {
        p,
        q,
        conditioning,
        seed,
    };
    let mut spec = from_parts(
        &descriptor.id(),
        QuadraticParts {
            a,
            b,
            c,
            lower_a,
            lower_b,
        },
    )?;
    spec.descriptor = descriptor;
    Ok(spec)
}
