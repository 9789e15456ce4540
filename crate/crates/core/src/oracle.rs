//! Stochastic first- and second-order oracles.
//!
//! A problem is made of deterministic maps (the composition levels and the
//! lower-level objective). The oracle turns them into unbiased samplers: each
//! draw is either the map's own intrinsic sample (for data-driven problems a
//! single resampled data point) plus zero-mean Gaussian noise, or, in
//! zero-noise mode, the exact value.
//!
//! Noise scales follow the second-moment convention of the convergence
//! analysis: a configured `sigma` bounds `E‖noise‖²` in the Euclidean (vector)
//! or Frobenius (matrix) norm, so each entry receives variance
//! `sigma² / entries`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::{Matrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("level {level}: expected input of dimension {expected}, got {found}")]
    LevelDimension {
        level: usize,
        expected: usize,
        found: usize,
    },
    #[error("lower level: expected {what} of dimension {expected}, got {found}")]
    LowerDimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("level {level} does not exist (composition has {depth} levels)")]
    NoSuchLevel { level: usize, depth: usize },
    #[error("chain of {found} points does not match composition depth {expected}")]
    ChainLength { expected: usize, found: usize },
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
}

/// A smooth map `f_i : R^{d_i} -> R^{d_{i-1}}`.
///
/// Jacobians are returned transposed (`d_i × d_{i-1}`), the gradient
/// convention used throughout the crate.
pub trait LevelMap: Send + Sync + fmt::Debug {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn value(&self, z: &Vector) -> Vector;
    fn jacobian(&self, z: &Vector) -> Matrix;

    /// One intrinsic draw of the value. Deterministic maps return the value.
    fn sample_value(&self, z: &Vector, _rng: &mut dyn RngCore) -> Vector {
        self.value(z)
    }

    /// One intrinsic draw of the transposed Jacobian.
    fn sample_jacobian(&self, z: &Vector, _rng: &mut dyn RngCore) -> Matrix {
        self.jacobian(z)
    }
}

/// Level `i` of the upper-level composition `f_1 ∘ … ∘ f_T`.
#[derive(Debug, Clone)]
pub struct CompositionLevel {
    pub index: usize,
    pub map: Arc<dyn LevelMap>,
}

impl CompositionLevel {
    pub fn new(index: usize, map: Arc<dyn LevelMap>) -> Self {
        Self { index, map }
    }

    pub fn input_dim(&self) -> usize {
        self.map.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.map.output_dim()
    }

    pub fn check_point(&self, point: &Vector) -> Result<(), OracleError> {
        if point.len() != self.input_dim() {
            return Err(OracleError::LevelDimension {
                level: self.index,
                expected: self.input_dim(),
                found: point.len(),
            });
        }
        Ok(())
    }
}

/// Checks that `levels` is a well-formed chain ending in a scalar.
pub fn check_chain_dims(levels: &[CompositionLevel]) -> Result<(), OracleError> {
    for (pos, level) in levels.iter().enumerate() {
        if level.index != pos + 1 {
            return Err(OracleError::NoSuchLevel {
                level: level.index,
                depth: levels.len(),
            });
        }
        if pos == 0 && level.output_dim() != 1 {
            return Err(OracleError::LevelDimension {
                level: 1,
                expected: 1,
                found: level.output_dim(),
            });
        }
        if let Some(next) = levels.get(pos + 1) {
            if next.output_dim() != level.input_dim() {
                return Err(OracleError::LevelDimension {
                    level: next.index,
                    expected: level.input_dim(),
                    found: next.output_dim(),
                });
            }
        }
    }
    Ok(())
}

/// The lower-level objective `g(x, y)`, strongly convex in `y`.
pub trait LowerObjective: Send + Sync + fmt::Debug {
    fn x_dim(&self) -> usize;
    fn y_dim(&self) -> usize;
    fn value(&self, x: &Vector, y: &Vector) -> f64;
    fn grad_y(&self, x: &Vector, y: &Vector) -> Vector;
    /// `∇²_{xy} g`, shape `p × q`.
    fn cross(&self, x: &Vector, y: &Vector) -> Matrix;
    /// `∇²_{yy} g`, shape `q × q`.
    fn hess_yy(&self, x: &Vector, y: &Vector) -> Matrix;

    fn sample_grad_y(&self, x: &Vector, y: &Vector, _rng: &mut dyn RngCore) -> Vector {
        self.grad_y(x, y)
    }
    fn sample_cross(&self, x: &Vector, y: &Vector, _rng: &mut dyn RngCore) -> Matrix {
        self.cross(x, y)
    }
    fn sample_hess_yy(&self, x: &Vector, y: &Vector, _rng: &mut dyn RngCore) -> Matrix {
        self.hess_yy(x, y)
    }

    /// Closed-form minimizer `y*(x)` when one is known.
    fn solve_y(&self, _x: &Vector) -> Option<Vector> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct LowerLevel {
    pub objective: Arc<dyn LowerObjective>,
    pub mu_g: f64,
    pub l_grad: f64,
    pub l_hess: f64,
}

impl LowerLevel {
    pub fn x_dim(&self) -> usize {
        self.objective.x_dim()
    }

    pub fn y_dim(&self) -> usize {
        self.objective.y_dim()
    }

    pub fn check(&self, x: &Vector, y: &Vector) -> Result<(), OracleError> {
        if x.len() != self.x_dim() {
            return Err(OracleError::LowerDimension {
                what: "x",
                expected: self.x_dim(),
                found: x.len(),
            });
        }
        if y.len() != self.y_dim() {
            return Err(OracleError::LowerDimension {
                what: "y",
                expected: self.y_dim(),
                found: y.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Gaussian,
    Zero,
}

/// Per-output noise scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    /// `σ_{F_i}` for `i = 1..T`.
    pub sigma_f: Vec<f64>,
    /// `σ_{J_i}` for `i = 1..T`.
    pub sigma_j: Vec<f64>,
    pub sigma_v: f64,
    pub sigma_jg: f64,
    pub sigma_h: f64,
    pub symmetrize_hessian: bool,
}

impl NoiseModel {
    /// Exact evaluation for a composition of depth `depth`.
    pub fn zero(depth: usize) -> Self {
        Self {
            kind: NoiseKind::Zero,
            sigma_f: vec![0.0; depth],
            sigma_j: vec![0.0; depth],
            sigma_v: 0.0,
            sigma_jg: 0.0,
            sigma_h: 0.0,
            symmetrize_hessian: true,
        }
    }

    /// Gaussian noise with the same scale on every output.
    pub fn gaussian(depth: usize, sigma: f64) -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            sigma_f: vec![sigma; depth],
            sigma_j: vec![sigma; depth],
            sigma_v: sigma,
            sigma_jg: sigma,
            sigma_h: sigma,
            symmetrize_hessian: true,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.kind == NoiseKind::Zero
    }

    pub fn depth(&self) -> usize {
        self.sigma_f.len()
    }

    /// `σ_{H_g}` as seen by step-size rules; zero in exact mode.
    pub fn effective_sigma_h(&self) -> f64 {
        match self.kind {
            NoiseKind::Zero => 0.0,
            NoiseKind::Gaussian => self.sigma_h,
        }
    }

    pub fn validate(&self, depth: usize) -> Result<(), OracleError> {
        if self.sigma_f.len() != depth || self.sigma_j.len() != depth {
            return Err(OracleError::InvalidNoise(format!(
                "expected {depth} per-level scales, got {} values and {} jacobians",
                self.sigma_f.len(),
                self.sigma_j.len()
            )));
        }
        let all = self
            .sigma_f
            .iter()
            .chain(self.sigma_j.iter())
            .copied()
            .chain([self.sigma_v, self.sigma_jg, self.sigma_h]);
        for s in all {
            if !s.is_finite() || s < 0.0 {
                return Err(OracleError::InvalidNoise(format!(
                    "scale {s} is not finite and non-negative"
                )));
            }
        }
        Ok(())
    }

    fn level_sigma(values: &[f64], level: usize) -> f64 {
        values.get(level - 1).copied().unwrap_or(0.0)
    }
}

fn add_vector_noise(v: &mut Vector, sigma: f64, rng: &mut dyn RngCore) {
    if sigma == 0.0 || v.is_empty() {
        return;
    }
    let scale = sigma / (v.len() as f64).sqrt();
    for e in v.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *e += scale * n;
    }
}

fn add_matrix_noise(m: &mut Matrix, sigma: f64, rng: &mut dyn RngCore) {
    if sigma == 0.0 || m.is_empty() {
        return;
    }
    let scale = sigma / (m.len() as f64).sqrt();
    // Column-major fill keeps the draw order fixed for a given shape.
    for e in m.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *e += scale * n;
    }
}

/// Adds `(E + Eᵀ)/2` with entry scale chosen so that `E‖·‖_F² = sigma²`.
fn add_symmetric_noise(h: &mut Matrix, sigma: f64, rng: &mut dyn RngCore) {
    let q = h.nrows();
    if sigma == 0.0 || q == 0 {
        return;
    }
    // Diagonal entries keep variance s², off-diagonal ones get s²/2,
    // so the total is s²·q(q+1)/2.
    let s = sigma * (2.0 / (q * (q + 1)) as f64).sqrt();
    let mut e = DMatrix::<f64>::zeros(q, q);
    for v in e.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v = s * n;
    }
    for i in 0..q {
        for j in 0..q {
            h[(i, j)] += 0.5 * (e[(i, j)] + e[(j, i)]);
        }
    }
}

/// Noisy `f_i(point)`.
pub fn sample_value(
    level: &CompositionLevel,
    point: &Vector,
    noise: &NoiseModel,
    rng: &mut dyn RngCore,
) -> Result<Vector, OracleError> {
    level.check_point(point)?;
    if noise.is_zero() {
        return Ok(level.map.value(point));
    }
    let mut v = level.map.sample_value(point, rng);
    add_vector_noise(&mut v, NoiseModel::level_sigma(&noise.sigma_f, level.index), rng);
    Ok(v)
}

/// Noisy transposed Jacobian `∇f_i(point)`.
pub fn sample_jacobian(
    level: &CompositionLevel,
    point: &Vector,
    noise: &NoiseModel,
    rng: &mut dyn RngCore,
) -> Result<Matrix, OracleError> {
    level.check_point(point)?;
    if noise.is_zero() {
        return Ok(level.map.jacobian(point));
    }
    let mut j = level.map.sample_jacobian(point, rng);
    add_matrix_noise(&mut j, NoiseModel::level_sigma(&noise.sigma_j, level.index), rng);
    Ok(j)
}

/// Noisy `∇_y g(x, y)`.
pub fn sample_lower_gradient(
    g: &LowerLevel,
    x: &Vector,
    y: &Vector,
    noise: &NoiseModel,
    rng: &mut dyn RngCore,
) -> Result<Vector, OracleError> {
    g.check(x, y)?;
    if noise.is_zero() {
        return Ok(g.objective.grad_y(x, y));
    }
    let mut v = g.objective.sample_grad_y(x, y, rng);
    add_vector_noise(&mut v, noise.sigma_v, rng);
    Ok(v)
}

/// Noisy `∇²_{xy} g(x, y)`.
pub fn sample_cross(
    g: &LowerLevel,
    x: &Vector,
    y: &Vector,
    noise: &NoiseModel,
    rng: &mut dyn RngCore,
) -> Result<Matrix, OracleError> {
    g.check(x, y)?;
    if noise.is_zero() {
        return Ok(g.objective.cross(x, y));
    }
    let mut c = g.objective.sample_cross(x, y, rng);
    add_matrix_noise(&mut c, noise.sigma_jg, rng);
    Ok(c)
}

/// Noisy `∇²_{yy} g(x, y)`; symmetric whenever the model symmetrizes.
pub fn sample_hessian(
    g: &LowerLevel,
    x: &Vector,
    y: &Vector,
    noise: &NoiseModel,
    rng: &mut dyn RngCore,
) -> Result<Matrix, OracleError> {
    g.check(x, y)?;
    if noise.is_zero() {
        return Ok(g.objective.hess_yy(x, y));
    }
    let mut h = g.objective.sample_hess_yy(x, y, rng);
    if noise.symmetrize_hessian {
        add_symmetric_noise(&mut h, noise.sigma_h, rng);
    } else {
        add_matrix_noise(&mut h, noise.sigma_h, rng);
    }
    Ok(h)
}

/// Independent draws of `(∇²_{xy} g, ∇²_{yy} g)`.
pub fn sample_cross_and_hessian(
    g: &LowerLevel,
    x: &Vector,
    y: &Vector,
    noise: &NoiseModel,
    rng: &mut dyn RngCore,
) -> Result<(Matrix, Matrix), OracleError> {
    let c = sample_cross(g, x, y, noise, rng)?;
    let h = sample_hessian(g, x, y, noise, rng)?;
    Ok((c, h))
}

/// Per-kind oracle call counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCalls {
    pub values: u64,
    pub jacobians: u64,
    pub lower_gradients: u64,
    pub cross: u64,
    pub hessians: u64,
}

impl OracleCalls {
    pub fn total(&self) -> u64 {
        self.values + self.jacobians + self.lower_gradients + self.cross + self.hessians
    }
}

/// Samplers bound to one problem and one noise model, with call counting.
#[derive(Debug)]
pub struct Oracle<'a> {
    levels: &'a [CompositionLevel],
    lower: &'a LowerLevel,
    noise: &'a NoiseModel,
    calls: OracleCalls,
}

impl<'a> Oracle<'a> {
    pub fn new(
        levels: &'a [CompositionLevel],
        lower: &'a LowerLevel,
        noise: &'a NoiseModel,
    ) -> Result<Self, OracleError> {
        check_chain_dims(levels)?;
        noise.validate(levels.len())?;
        Ok(Self {
            levels,
            lower,
            noise,
            calls: OracleCalls::default(),
        })
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &'a [CompositionLevel] {
        self.levels
    }

    pub fn lower(&self) -> &'a LowerLevel {
        self.lower
    }

    pub fn noise(&self) -> &'a NoiseModel {
        self.noise
    }

    pub fn calls(&self) -> OracleCalls {
        self.calls
    }

    pub fn level(&self, i: usize) -> Result<&'a CompositionLevel, OracleError> {
        if i == 0 || i > self.levels.len() {
            return Err(OracleError::NoSuchLevel {
                level: i,
                depth: self.levels.len(),
            });
        }
        Ok(&self.levels[i - 1])
    }

    pub fn value(&mut self, i: usize, point: &Vector, rng: &mut dyn RngCore) -> Result<Vector, OracleError> {
        let level = self.level(i)?;
        let v = sample_value(level, point, self.noise, rng)?;
        self.calls.values += 1;
        Ok(v)
    }

    pub fn jacobian(&mut self, i: usize, point: &Vector, rng: &mut dyn RngCore) -> Result<Matrix, OracleError> {
        let level = self.level(i)?;
        let j = sample_jacobian(level, point, self.noise, rng)?;
        self.calls.jacobians += 1;
        Ok(j)
    }

    pub fn lower_gradient(&mut self, x: &Vector, y: &Vector, rng: &mut dyn RngCore) -> Result<Vector, OracleError> {
        let v = sample_lower_gradient(self.lower, x, y, self.noise, rng)?;
        self.calls.lower_gradients += 1;
        Ok(v)
    }

    pub fn cross(&mut self, x: &Vector, y: &Vector, rng: &mut dyn RngCore) -> Result<Matrix, OracleError> {
        let c = sample_cross(self.lower, x, y, self.noise, rng)?;
        self.calls.cross += 1;
        Ok(c)
    }

    pub fn hessian(&mut self, x: &Vector, y: &Vector, rng: &mut dyn RngCore) -> Result<Matrix, OracleError> {
        let h = sample_hessian(self.lower, x, y, self.noise, rng)?;
        self.calls.hessians += 1;
        Ok(h)
    }
}

/// One draw of every stochastic quantity at a fixed chain and point.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSample {
    /// `F^{(i)}` for `i = 1..T`.
    pub values: Vec<Vector>,
    /// `J^{(i)}` for `i = 1..T`.
    pub jacobians: Vec<Matrix>,
    pub lower_gradient: Vector,
    pub cross: Matrix,
    pub hessian: Matrix,
    pub seed: u64,
    pub counter: u64,
}

/// Draws a full [`OracleSample`] from the stream `(seed, counter)`.
///
/// `points[i-1]` is where level `i` is evaluated (`u^{(i+1)}`); the lower
/// level is evaluated at `(x, y)`.
pub fn draw_sample(
    levels: &[CompositionLevel],
    lower: &LowerLevel,
    noise: &NoiseModel,
    points: &[Vector],
    x: &Vector,
    y: &Vector,
    seed: u64,
    counter: u64,
) -> Result<OracleSample, OracleError> {
    if points.len() != levels.len() {
        return Err(OracleError::ChainLength {
            expected: levels.len(),
            found: points.len(),
        });
    }
    let mut rng = rng::stream(seed ^ SAMPLE_SALT, counter);
    let mut values = Vec::with_capacity(levels.len());
    let mut jacobians = Vec::with_capacity(levels.len());
    for (level, point) in levels.iter().zip(points) {
        values.push(sample_value(level, point, noise, &mut rng)?);
        jacobians.push(sample_jacobian(level, point, noise, &mut rng)?);
    }
    let lower_gradient = sample_lower_gradient(lower, x, y, noise, &mut rng)?;
    let (cross, hessian) = sample_cross_and_hessian(lower, x, y, noise, &mut rng)?;
    Ok(OracleSample {
        values,
        jacobians,
        lower_gradient,
        cross,
        hessian,
        seed,
        counter,
    })
}

const SAMPLE_SALT: u64 = 0x5eed_0a11_0c1e_0001;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::maps::IdentityMap;
    use crate::problems::quadratic::QuadraticLower;
    use crate::rng::stream;

    fn v(e: &[f64]) -> Vector {
        Vector::from_row_slice(e)
    }

    /// `(z₁², z₁z₂)`.
    #[derive(Debug)]
    struct Prod;

    impl LevelMap for Prod {
        fn input_dim(&self) -> usize {
            2
        }
        fn output_dim(&self) -> usize {
            2
        }
        fn value(&self, z: &Vector) -> Vector {
            v(&[z[0] * z[0], z[0] * z[1]])
        }
        fn jacobian(&self, z: &Vector) -> Matrix {
            Matrix::from_row_slice(2, 2, &[2.0 * z[0], z[1], 0.0, z[0]])
        }
    }

    fn identity_level(n: usize) -> CompositionLevel {
        CompositionLevel::new(1, Arc::new(IdentityMap { dim: n }))
    }

    fn head() -> CompositionLevel {
        CompositionLevel::new(
            1,
            Arc::new(crate::problems::maps::LinearHead {
                c: v(&[1.0, 1.0]),
                c0: 0.0,
            }),
        )
    }

    fn lower(a: Matrix, b: Matrix) -> LowerLevel {
        QuadraticLower::new(a, b).unwrap().into_lower()
    }

    fn noise_with(f: f64, j: f64, rest: f64) -> NoiseModel {
        NoiseModel {
            sigma_f: vec![f],
            sigma_j: vec![j],
            ..NoiseModel::gaussian(1, rest)
        }
    }

    #[test]
    fn exact_value_examples() {
        let mut rng = stream(0, 0);
        let zero = NoiseModel::zero(1);
        let id = identity_level(2);
        assert_eq!(sample_value(&id, &v(&[1.0, 2.0]), &zero, &mut rng).unwrap(), v(&[1.0, 2.0]));
        let prod = CompositionLevel::new(1, Arc::new(Prod));
        assert_eq!(sample_value(&prod, &v(&[2.0, 3.0]), &zero, &mut rng).unwrap(), v(&[4.0, 6.0]));
        let j3 = sample_jacobian(&identity_level(3), &v(&[0.3, -1.0, 7.0]), &zero, &mut rng).unwrap();
        assert_eq!(j3, Matrix::identity(3, 3));
    }

    #[test]
    fn product_jacobian_matches_finite_differences() {
        let mut rng = stream(0, 0);
        let prod = CompositionLevel::new(1, Arc::new(Prod));
        let point = v(&[2.0, 3.0]);
        let j = sample_jacobian(&prod, &point, &NoiseModel::zero(1), &mut rng).unwrap();
        assert_eq!(j, Matrix::from_row_slice(2, 2, &[4.0, 3.0, 0.0, 2.0]));
        let fd = crate::diagnostics::fd::jacobian_transposed(|z| Prod.value(z), &point, 1e-6);
        assert!((fd - j).norm() < 1e-8);
    }

    #[test]
    fn dimension_mismatch_names_level() {
        let mut rng = stream(0, 0);
        let level = CompositionLevel::new(2, Arc::new(IdentityMap { dim: 3 }));
        let err = sample_value(&level, &v(&[1.0]), &NoiseModel::zero(2), &mut rng).unwrap_err();
        assert_eq!(
            err,
            OracleError::LevelDimension {
                level: 2,
                expected: 3,
                found: 1
            }
        );
        let g = lower(Matrix::identity(2, 2), Matrix::identity(2, 2));
        assert!(matches!(
            sample_lower_gradient(&g, &v(&[1.0, 2.0]), &v(&[1.0]), &NoiseModel::zero(1), &mut rng),
            Err(OracleError::LowerDimension { .. })
        ));
    }

    #[test]
    fn lower_level_examples() {
        let mut rng = stream(0, 0);
        let zero = NoiseModel::zero(1);
        let half_norm = lower(Matrix::identity(2, 2), Matrix::zeros(2, 2));
        let x = v(&[5.0, -5.0]);
        assert_eq!(sample_lower_gradient(&half_norm, &x, &v(&[1.0, -1.0]), &zero, &mut rng).unwrap(), v(&[1.0, -1.0]));
        let (c, h) = sample_cross_and_hessian(&half_norm, &x, &v(&[1.0, -1.0]), &zero, &mut rng).unwrap();
        assert_eq!(c, Matrix::zeros(2, 2));
        assert_eq!(h, Matrix::identity(2, 2));

        let g = lower(Matrix::from_diagonal(&v(&[2.0, 3.0])), Matrix::identity(2, 2));
        let grad = sample_lower_gradient(&g, &v(&[1.0, 1.0]), &v(&[1.0, 1.0]), &zero, &mut rng).unwrap();
        assert_eq!(grad, v(&[1.0, 2.0]));
        let x = v(&[0.4, -2.0]);
        let y_star = g.objective.solve_y(&x).unwrap();
        assert!(sample_lower_gradient(&g, &x, &y_star, &zero, &mut rng).unwrap().norm() < 1e-15);
    }

    #[test]
    fn cross_partial_sign_matches_finite_differences() {
        let b = Matrix::from_row_slice(2, 2, &[1.0, -0.5, 0.25, 2.0]);
        let g = lower(Matrix::from_diagonal(&v(&[2.0, 3.0])), b.clone());
        let mut rng = stream(0, 0);
        let x = v(&[0.3, 0.7]);
        let y = v(&[-1.0, 0.5]);
        let (c, _) = sample_cross_and_hessian(&g, &x, &y, &NoiseModel::zero(1), &mut rng).unwrap();
        assert_eq!(c, -b);
        // Row i of ∇²_{xy} g is ∂/∂x_i of ∇_y g.
        let fd = crate::diagnostics::fd::jacobian_transposed(|xx| g.objective.grad_y(xx, &y), &x, 1e-6);
        assert!((fd - c).norm() < 1e-8);
    }

    #[test]
    fn noisy_hessian_is_exactly_symmetric() {
        let g = lower(Matrix::from_diagonal(&v(&[1.0, 2.0, 3.0])), Matrix::identity(3, 3));
        let noise = NoiseModel::gaussian(1, 0.7);
        let mut rng = stream(3, 1);
        for _ in 0..100 {
            let h = sample_hessian(&g, &v(&[0.0; 3]), &v(&[0.0; 3]), &noise, &mut rng).unwrap();
            assert_eq!(h, h.transpose());
        }
    }

    const N: usize = 100_000;

    #[test]
    fn value_mean_within_three_sigma() {
        let level = identity_level(2);
        let noise = noise_with(0.1, 0.0, 0.0);
        let mut rng = stream(11, 0);
        let mut sum = Vector::zeros(2);
        for _ in 0..N {
            sum += sample_value(&level, &v(&[1.0, 0.0]), &noise, &mut rng).unwrap();
        }
        let mean = sum / N as f64;
        // Per-coordinate sd is σ/√2 under the second-moment convention; σ/√n is wider.
        let band = 3.0 * 0.1 / (N as f64).sqrt();
        assert!((mean[0] - 1.0).abs() < band && mean[1].abs() < band, "{mean}");
    }

    #[test]
    fn jacobian_mean_within_three_sigma() {
        let level = CompositionLevel::new(1, Arc::new(Prod));
        let sigma = 0.2;
        let noise = noise_with(0.0, sigma, 0.0);
        let point = v(&[2.0, 3.0]);
        let mut rng = stream(12, 0);
        let mut sum = Matrix::zeros(2, 2);
        for _ in 0..N {
            sum += sample_jacobian(&level, &point, &noise, &mut rng).unwrap();
        }
        let mean = sum / N as f64;
        let band = 3.0 * sigma / (N as f64).sqrt();
        let exact = Prod.jacobian(&point);
        for (m, e) in mean.iter().zip(exact.iter()) {
            assert!((m - e).abs() < band);
        }
    }

    #[test]
    fn lower_samples_unbiased_with_configured_second_moment() {
        let a = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = Matrix::from_row_slice(3, 2, &[1.0, 0.0, -1.0, 2.0, 0.5, 0.5]);
        let g = lower(a.clone(), b.clone());
        let sigma = 0.3;
        let noise = NoiseModel::gaussian(1, sigma);
        let (x, y) = (v(&[1.0, -1.0, 0.5]), v(&[0.2, 0.4]));
        let mut rng = stream(13, 0);
        let (mut gs, mut cs, mut hs) = (Vector::zeros(2), Matrix::zeros(3, 2), Matrix::zeros(2, 2));
        let (mut g2, mut c2, mut h2) = (0.0, 0.0, 0.0);
        let exact_g = g.objective.grad_y(&x, &y);
        for _ in 0..N {
            let gv = sample_lower_gradient(&g, &x, &y, &noise, &mut rng).unwrap();
            let (c, h) = sample_cross_and_hessian(&g, &x, &y, &noise, &mut rng).unwrap();
            g2 += (&gv - &exact_g).norm_squared();
            c2 += (&c + &b).norm_squared();
            h2 += (&h - &a).norm_squared();
            gs += gv;
            cs += c;
            hs += h;
        }
        let n = N as f64;
        let band = 3.0 * sigma / n.sqrt();
        assert!((gs / n - exact_g).amax() < band);
        assert!((cs / n + &b).amax() < band);
        assert!((hs / n - &a).amax() < band);
        for second in [g2 / n, c2 / n, h2 / n] {
            assert!((second - sigma * sigma).abs() < 0.02 * sigma * sigma, "{second}");
        }
    }

    #[test]
    fn distinct_counters_are_uncorrelated() {
        let level = identity_level(1);
        let noise = noise_with(1.0, 0.0, 0.0);
        let lower = lower(Matrix::identity(1, 1), Matrix::identity(1, 1));
        let levels = [level];
        let pts = [v(&[0.0])];
        let (x, y) = (v(&[0.0]), v(&[0.0]));
        let mut a = Vec::with_capacity(N);
        let mut b = Vec::with_capacity(N);
        for c in 0..N as u64 {
            a.push(draw_sample(&levels, &lower, &noise, &pts, &x, &y, 21, 2 * c).unwrap().values[0][0]);
            b.push(draw_sample(&levels, &lower, &noise, &pts, &x, &y, 21, 2 * c + 1).unwrap().values[0][0]);
        }
        let (ma, mb) = (a.iter().sum::<f64>() / N as f64, b.iter().sum::<f64>() / N as f64);
        let cov: f64 = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum();
        let va: f64 = a.iter().map(|p| (p - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|q| (q - mb).powi(2)).sum();
        let rho = cov / (va * vb).sqrt();
        assert!(rho.abs() < 0.02, "{rho}");
    }

    #[test]
    fn same_seed_and_counter_reproduce_bytes() {
        let levels = [CompositionLevel::new(1, Arc::new(Prod))];
        let g = lower(Matrix::from_diagonal(&v(&[1.0, 2.0])), Matrix::identity(2, 2));
        let noise = NoiseModel::gaussian(1, 0.5);
        let pts = [v(&[1.0, 2.0])];
        let (x, y) = (v(&[0.1, 0.2]), v(&[0.3, 0.4]));
        let a = draw_sample(&levels, &g, &noise, &pts, &x, &y, 5, 9).unwrap();
        let b = draw_sample(&levels, &g, &noise, &pts, &x, &y, 5, 9).unwrap();
        let c = draw_sample(&levels, &g, &noise, &pts, &x, &y, 5, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
        assert_eq!(a.hessian, a.hessian.transpose());
        let bits = |s: &OracleSample| s.values[0].iter().map(|e| e.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn zero_mode_is_exact_and_counts_calls() {
        let levels = [head(), CompositionLevel::new(2, Arc::new(Prod))];
        let g = lower(Matrix::identity(1, 1), Matrix::identity(1, 1));
        let noise = NoiseModel::zero(2);
        let mut oracle = Oracle::new(&levels, &g, &noise).unwrap();
        let mut rng = stream(1, 1);
        let p = v(&[1.0, 1.5]);
        assert_eq!(oracle.value(2, &p, &mut rng).unwrap(), Prod.value(&p));
        oracle.jacobian(2, &p, &mut rng).unwrap();
        oracle.hessian(&v(&[1.0]), &v(&[1.5]), &mut rng).unwrap();
        assert!(oracle.value(3, &p, &mut rng).is_err());
        let calls = oracle.calls();
        assert_eq!((calls.values, calls.jacobians, calls.hessians, calls.total()), (1, 1, 1, 3));
    }

    #[test]
    fn invalid_noise_rejected() {
        let levels = [head()];
        let g = lower(Matrix::identity(1, 1), Matrix::identity(1, 1));
        Oracle::new(&levels, &g, &NoiseModel::gaussian(1, 0.1)).unwrap();
        let mut bad = NoiseModel::gaussian(1, 0.1);
        bad.sigma_h = -1.0;
        assert!(matches!(Oracle::new(&levels, &g, &bad), Err(OracleError::InvalidNoise(_))));
        let short = NoiseModel::gaussian(2, 0.1);
        assert!(Oracle::new(&levels, &g, &short).is_err());
    }
}
