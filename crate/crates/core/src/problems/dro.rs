//! Mean semi-deviation regression under covariate shift.
//!
//! A feature map `φ_θ` is learned at the upper level while the linear read-out
//! `β` solves a ridge-regularized least-squares lower level:
//!
//! ```text
//! g(θ, β) = ½ E[(Y − βᵀφ_θ(X))²] + (μ_reg/2)‖β‖²
//! Ψ(θ, β) = E[ℓ] + λ √(E[s_κ(ℓ − E[ℓ])²] + ε_s),   ℓ = (Y − βᵀφ_θ(X))²
//! ```
//!
//! The risk is written as three levels so that every level is an expectation
//! of a sampled quantity:
//!
//! ```text
//! f_3(θ, β)    = (θ, β, E[ℓ])
//! f_2(θ, β, m) = (m, E[s_κ(ℓ − m)²])
//! f_1(m, s)    = m + λ √(max(s, 0) + ε_s)
//! ```
//!
//! Expectations are over a finite training set; each stochastic draw uses
//! one uniformly resampled training point.

use std::sync::Arc;

use rand::distr::{Distribution, Uniform};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{InstanceDescriptor, ProblemError, ProblemSpec, SmoothnessConstants};
use crate::bilinasa::FeasibleSet;
use crate::linalg;
use crate::oracle::{CompositionLevel, LevelMap, LowerLevel, LowerObjective};
use crate::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureMap {
    /// `φ = WX + b` with `width` features.
    Linear { width: usize },
    /// `φ = tanh(W₂ tanh(W₁X + b₁) + b₂)`, hidden width and feature count `width`.
    TwoLayerTanh { width: usize },
}

impl FeatureMap {
    pub fn width(&self) -> usize {
        match *self {
            FeatureMap::Linear { width } | FeatureMap::TwoLayerTanh { width } => width,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FeatureMap::Linear { .. } => "linear",
            FeatureMap::TwoLayerTanh { .. } => "tanh2",
        }
    }

    pub fn param_count(&self, input_dim: usize) -> usize {
        match *self {
            FeatureMap::Linear { width } => width * (input_dim + 1),
            FeatureMap::TwoLayerTanh { width } => width * input_dim + width + width * width + width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DroConfig {
    pub n_train: usize,
    pub input_dim: usize,
    /// Number of index directions in the label model.
    pub m_idx: usize,
    /// Weight of the sine term in the label model.
    pub c: f64,
    pub lambda: f64,
    pub feature_map: FeatureMap,
    pub mu_reg: f64,
    pub kappa: f64,
    pub eps_s: f64,
    pub train_noise: f64,
    pub test_noise: f64,
    pub n_test: usize,
    pub data_seed: u64,
}

impl Default for DroConfig {
    fn default() -> Self {
        Self {
            n_train: 200,
            input_dim: 10,
            m_idx: 5,
            c: 1.0,
            lambda: 1.65e-3,
            feature_map: FeatureMap::TwoLayerTanh { width: 8 },
            mu_reg: 1e-2,
            kappa: 0.01,
            eps_s: 1e-6,
            train_noise: 0.01,
            test_noise: 0.1,
            n_test: 1000,
            data_seed: 2024,
        }
    }
}

impl DroConfig {
    pub fn validate(&self) -> Result<(), ProblemError> {
        if self.n_train == 0 || self.input_dim == 0 || self.m_idx == 0 || self.feature_map.width() == 0 || self.n_test == 0 {
            return Err(ProblemError::InvalidDimension(format!(
                "n_train = {}, input_dim = {}, m_idx = {}, width = {}, n_test = {}",
                self.n_train,
                self.input_dim,
                self.m_idx,
                self.feature_map.width(),
                self.n_test
            )));
        }
        let positive = [("mu_reg", self.mu_reg), ("kappa", self.kappa), ("eps_s", self.eps_s)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ProblemError::InvalidParameter(format!("{name} = {v} must be positive")));
            }
        }
        let non_negative = [
            ("lambda", self.lambda),
            ("train_noise", self.train_noise),
            ("test_noise", self.test_noise),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ProblemError::InvalidParameter(format!("{name} = {v} must be non-negative")));
            }
        }
        if !self.c.is_finite() {
            return Err(ProblemError::InvalidParameter("c must be finite".into()));
        }
        Ok(())
    }
}

/// `κ log(1 + exp(t/κ))`, computed without overflow.
pub fn softplus(t: f64, kappa: f64) -> f64 {
    let u = t / kappa;
    if u > 0.0 {
        t + kappa * (-u).exp().ln_1p()
    } else {
        kappa * u.exp().ln_1p()
    }
}

/// Derivative of [`softplus`]: the logistic function of `t/κ`.
pub fn softplus_prime(t: f64, kappa: f64) -> f64 {
    let u = t / kappa;
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `n × dim` covariates with i.i.d. coordinates of density `∝ t^a (1 − t)^b`
/// on `[0, 1]`, i.e. `Beta(a + 1, b + 1)`.
pub fn sample_shifted_covariates(n: usize, dim: usize, a: f64, b: f64, seed: u64) -> Result<Matrix, ProblemError> {
    if !(a > -1.0 && b > -1.0) || !a.is_finite() || !b.is_finite() {
        return Err(ProblemError::InvalidParameter(format!("exponents a = {a}, b = {b} must exceed -1")));
    }
    let beta = Beta::new(a + 1.0, b + 1.0).map_err(|e| ProblemError::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Matrix::from_fn(n, dim, |_, _| beta.sample(&mut rng)))
}

/// Training data, label model and feature map of one regression instance.
#[derive(Debug, Clone)]
pub struct DroModel {
    pub config: DroConfig,
    /// Rows are training covariates.
    pub train_x: Matrix,
    pub train_y: Vector,
    /// Rows are the unit index directions `ω_i`.
    pub omegas: Matrix,
    pub theta0: Vector,
}

/// One training point's loss and its gradient in `(θ, β)`.
struct PointLoss {
    loss: f64,
    grad: Vector,
}

impl DroModel {
    pub fn new(config: DroConfig) -> Result<Self, ProblemError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.data_seed);
        let dim = config.input_dim;
        let mut omegas = Matrix::from_fn(config.m_idx, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        for mut row in omegas.row_iter_mut() {
            let n = row.norm();
            row /= n;
        }
        let unit = Uniform::new(0.0, 1.0).expect("valid range");
        let train_x = Matrix::from_fn(config.n_train, dim, |_, _| unit.sample(&mut rng));
        let mut model = Self {
            train_y: Vector::zeros(config.n_train),
            theta0: Vector::zeros(config.feature_map.param_count(dim)),
            config,
            train_x,
            omegas,
        };
        for j in 0..model.config.n_train {
            let xj = model.train_x.row(j).transpose();
            let eps: f64 = rng.sample(StandardNormal);
            model.train_y[j] = model.label(&xj) + model.config.train_noise * eps;
        }
        model.theta0 = model.init_theta(&mut rng);
        Ok(model)
    }

    pub fn p(&self) -> usize {
        self.config.feature_map.param_count(self.config.input_dim)
    }

    pub fn q(&self) -> usize {
        self.config.feature_map.width()
    }

    /// Noise-free label `Σ_i ω_iᵀX + c·sin(ω_iᵀX)`.
    pub fn label(&self, x: &Vector) -> f64 {
        (&self.omegas * x).iter().map(|t| t + self.config.c * t.sin()).sum()
    }

    fn init_theta(&self, rng: &mut ChaCha8Rng) -> Vector {
        let dim = self.config.input_dim;
        let mut theta = Vector::zeros(self.p());
        match self.config.feature_map {
            FeatureMap::Linear { width } => {
                let s = 1.0 / (dim as f64).sqrt();
                for i in 0..width * dim {
                    theta[i] = s * rng.sample::<f64, _>(StandardNormal);
                }
            }
            FeatureMap::TwoLayerTanh { width } => {
                let s1 = 1.0 / (dim as f64).sqrt();
                for i in 0..width * dim {
                    theta[i] = s1 * rng.sample::<f64, _>(StandardNormal);
                }
                let off = width * dim + width;
                let s2 = 1.0 / (width as f64).sqrt();
                for i in 0..width * width {
                    theta[off + i] = s2 * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        theta
    }

    /// `φ_θ(X)`.
    pub fn features(&self, theta: &Vector, x: &Vector) -> Vector {
        let dim = self.config.input_dim;
        match self.config.feature_map {
            FeatureMap::Linear { width } => Vector::from_fn(width, |k, _| {
                let w = theta.rows(k * dim, dim);
                w.dot(x) + theta[width * dim + k]
            }),
            FeatureMap::TwoLayerTanh { width } => {
                let h = self.hidden(theta, x, width);
                let off = width * dim + width;
                Vector::from_fn(width, |k, _| {
                    let w2 = theta.rows(off + k * width, width);
                    (w2.dot(&h) + theta[off + width * width + k]).tanh()
                })
            }
        }
    }

    fn hidden(&self, theta: &Vector, x: &Vector, width: usize) -> Vector {
        let dim = self.config.input_dim;
        Vector::from_fn(width, |l, _| {
            let w1 = theta.rows(l * dim, dim);
            (w1.dot(x) + theta[width * dim + l]).tanh()
        })
    }

    /// `(φ_θ(X), ∂φ/∂θ)` with the Jacobian shaped `q × p`.
    pub fn features_jacobian(&self, theta: &Vector, x: &Vector) -> (Vector, Matrix) {
        let dim = self.config.input_dim;
        let p = self.p();
        match self.config.feature_map {
            FeatureMap::Linear { width } => {
                let phi = self.features(theta, x);
                let mut jac = Matrix::zeros(width, p);
                for k in 0..width {
                    for m in 0..dim {
                        jac[(k, k * dim + m)] = x[m];
                    }
                    jac[(k, width * dim + k)] = 1.0;
                }
                (phi, jac)
            }
            FeatureMap::TwoLayerTanh { width } => {
                let h = self.hidden(theta, x, width);
                let phi = self.features(theta, x);
                let off2 = width * dim + width;
                let offb2 = off2 + width * width;
                let mut jac = Matrix::zeros(width, p);
                for k in 0..width {
                    let s2 = 1.0 - phi[k] * phi[k];
                    for l in 0..width {
                        jac[(k, off2 + k * width + l)] = s2 * h[l];
                        let back = s2 * theta[off2 + k * width + l] * (1.0 - h[l] * h[l]);
                        for m in 0..dim {
                            jac[(k, l * dim + m)] = back * x[m];
                        }
                        jac[(k, width * dim + l)] = back;
                    }
                    jac[(k, offb2 + k)] = s2;
                }
                (phi, jac)
            }
        }
    }

    fn point(&self, j: usize) -> (Vector, f64) {
        (self.train_x.row(j).transpose(), self.train_y[j])
    }

    fn draw(&self, rng: &mut dyn RngCore) -> usize {
        rng.random_range(0..self.config.n_train)
    }

    fn loss_at(&self, z: &Vector, j: usize) -> f64 {
        let p = self.p();
        let (theta, beta) = (z.rows(0, p).into_owned(), z.rows(p, self.q()).into_owned());
        let (xj, yj) = self.point(j);
        let r = yj - beta.dot(&self.features(&theta, &xj));
        r * r
    }

    fn loss_grad_at(&self, z: &Vector, j: usize) -> PointLoss {
        let p = self.p();
        let (theta, beta) = (z.rows(0, p).into_owned(), z.rows(p, self.q()).into_owned());
        let (xj, yj) = self.point(j);
        let (phi, jac) = self.features_jacobian(&theta, &xj);
        let r = yj - beta.dot(&phi);
        let gt = jac.transpose() * &beta * (-2.0 * r);
        let gb = &phi * (-2.0 * r);
        PointLoss {
            loss: r * r,
            grad: linalg::concat(&gt, &gb),
        }
    }

    /// Mean squared error of `βᵀφ_θ` on fresh labels at `covariates`.
    pub fn test_loss(&self, theta: &Vector, beta: &Vector, covariates: &Matrix, label_seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(label_seed);
        let n = covariates.nrows();
        let mut total = 0.0;
        for i in 0..n {
            let xi = covariates.row(i).transpose();
            let eps: f64 = rng.sample(StandardNormal);
            let y = self.label(&xi) + self.config.test_noise * eps;
            let r = y - beta.dot(&self.features(theta, &xi));
            total += r * r;
        }
        total / n as f64
    }

    /// Test loss under covariates with exponents `(a, b)`; the test set is a
    /// fixed function of the data seed and the exponents.
    pub fn shifted_test_loss(&self, theta: &Vector, beta: &Vector, a: f64, b: f64) -> Result<f64, ProblemError> {
        let seed = self.config.data_seed ^ a.to_bits().rotate_left(17) ^ b.to_bits().rotate_left(41);
        let cov = sample_shifted_covariates(self.config.n_test, self.config.input_dim, a, b, seed)?;
        Ok(self.test_loss(theta, beta, &cov, seed.wrapping_add(1)))
    }

    /// Mean training loss `E[ℓ]`.
    pub fn train_loss(&self, theta: &Vector, beta: &Vector) -> f64 {
        let z = linalg::concat(theta, beta);
        (0..self.config.n_train).map(|j| self.loss_at(&z, j)).sum::<f64>() / self.config.n_train as f64
    }

    /// Ridge solution `β*(θ)`.
    pub fn ridge(&self, theta: &Vector) -> Option<Vector> {
        let q = self.q();
        let mut gram = Matrix::identity(q, q) * self.config.mu_reg;
        let mut rhs = Vector::zeros(q);
        let n = self.config.n_train as f64;
        for j in 0..self.config.n_train {
            let (xj, yj) = self.point(j);
            let phi = self.features(theta, &xj);
            gram += &phi * phi.transpose() / n;
            rhs += &phi * (yj / n);
        }
        linalg::spd_solve(&gram, &rhs)
    }
}

#[derive(Debug)]
struct LossLevel(Arc<DroModel>);

impl LossLevel {
    fn assemble(&self, z: &Vector, mean_loss: f64) -> Vector {
        let n = z.len();
        let mut out = Vector::zeros(n + 1);
        out.rows_mut(0, n).copy_from(z);
        out[n] = mean_loss;
        out
    }

    fn jac_from(&self, grad: &Vector) -> Matrix {
        let n = grad.len();
        let mut jt = Matrix::zeros(n, n + 1);
        jt.view_mut((0, 0), (n, n)).fill_with_identity();
        jt.column_mut(n).copy_from(grad);
        jt
    }
}

impl LevelMap for LossLevel {
    fn input_dim(&self) -> usize {
        self.0.p() + self.0.q()
    }
    fn output_dim(&self) -> usize {
        self.input_dim() + 1
    }
    fn value(&self, z: &Vector) -> Vector {
        let n = self.0.config.n_train;
        let mean = (0..n).map(|j| self.0.loss_at(z, j)).sum::<f64>() / n as f64;
        self.assemble(z, mean)
    }
    fn jacobian(&self, z: &Vector) -> Matrix {
        let n = self.0.config.n_train;
        let mut g = Vector::zeros(z.len());
        for j in 0..n {
            g += self.0.loss_grad_at(z, j).grad;
        }
        self.jac_from(&(g / n as f64))
    }
    fn sample_value(&self, z: &Vector, rng: &mut dyn RngCore) -> Vector {
        let j = self.0.draw(rng);
        self.assemble(z, self.0.loss_at(z, j))
    }
    fn sample_jacobian(&self, z: &Vector, rng: &mut dyn RngCore) -> Matrix {
        let j = self.0.draw(rng);
        self.jac_from(&self.0.loss_grad_at(z, j).grad)
    }
}

#[derive(Debug)]
struct DeviationLevel(Arc<DroModel>);

impl DeviationLevel {
    fn split<'a>(&self, w: &'a Vector) -> (Vector, f64) {
        let n = w.len() - 1;
        (w.rows(0, n).into_owned(), w[n])
    }

    fn value_at(&self, z: &Vector, m: f64, j: usize) -> f64 {
        let s = softplus(self.0.loss_at(z, j) - m, self.0.config.kappa);
        s * s
    }

    fn grad_at(&self, z: &Vector, m: f64, j: usize) -> Vector {
        let kappa = self.0.config.kappa;
        let pl = self.0.loss_grad_at(z, j);
        let t = pl.loss - m;
        let coef = 2.0 * softplus(t, kappa) * softplus_prime(t, kappa);
        let n = z.len();
        let mut g = Vector::zeros(n + 1);
        g.rows_mut(0, n).copy_from(&(pl.grad * coef));
        g[n] = -coef;
        g
    }

    fn jac_from(&self, dev_grad: &Vector) -> Matrix {
        let n = dev_grad.len();
        let mut jt = Matrix::zeros(n, 2);
        jt[(n - 1, 0)] = 1.0;
        jt.column_mut(1).copy_from(dev_grad);
        jt
    }
}

impl LevelMap for DeviationLevel {
    fn input_dim(&self) -> usize {
        self.0.p() + self.0.q() + 1
    }
    fn output_dim(&self) -> usize {
        2
    }
    fn value(&self, w: &Vector) -> Vector {
        let (z, m) = self.split(w);
        let n = self.0.config.n_train;
        let dev = (0..n).map(|j| self.value_at(&z, m, j)).sum::<f64>() / n as f64;
        Vector::from_vec(vec![m, dev])
    }
    fn jacobian(&self, w: &Vector) -> Matrix {
        let (z, m) = self.split(w);
        let n = self.0.config.n_train;
        let mut g = Vector::zeros(w.len());
        for j in 0..n {
            g += self.grad_at(&z, m, j);
        }
        self.jac_from(&(g / n as f64))
    }
    fn sample_value(&self, w: &Vector, rng: &mut dyn RngCore) -> Vector {
        let (z, m) = self.split(w);
        let j = self.0.draw(rng);
        Vector::from_vec(vec![m, self.value_at(&z, m, j)])
    }
    fn sample_jacobian(&self, w: &Vector, rng: &mut dyn RngCore) -> Matrix {
        let (z, m) = self.split(w);
        let j = self.0.draw(rng);
        self.jac_from(&self.grad_at(&z, m, j))
    }
}

/// `(m, s) ↦ m + λ √(max(s, 0) + ε_s)`.
#[derive(Debug)]
struct RiskHead {
    lambda: f64,
    eps_s: f64,
}

impl LevelMap for RiskHead {
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn value(&self, w: &Vector) -> Vector {
        Vector::from_element(1, w[0] + self.lambda * (w[1].max(0.0) + self.eps_s).sqrt())
    }
    fn jacobian(&self, w: &Vector) -> Matrix {
        let ds = if w[1] > 0.0 {
            self.lambda / (2.0 * (w[1] + self.eps_s).sqrt())
        } else {
            0.0
        };
        Matrix::from_column_slice(2, 1, &[1.0, ds])
    }
}

#[derive(Debug)]
struct DroLower(Arc<DroModel>);

impl DroLower {
    fn parts(&self, x: &Vector, y: &Vector, j: usize) -> (Vector, f64) {
        let (xj, yj) = self.0.point(j);
        let phi = self.0.features(x, &xj);
        let r = yj - y.dot(&phi);
        (phi, r)
    }

    fn grad_at(&self, x: &Vector, y: &Vector, j: usize) -> Vector {
        let (phi, r) = self.parts(x, y, j);
        phi * (-r) + y * self.0.config.mu_reg
    }

    fn cross_at(&self, x: &Vector, y: &Vector, j: usize) -> Matrix {
        let (xj, yj) = self.0.point(j);
        let (phi, jac) = self.0.features_jacobian(x, &xj);
        let r = yj - y.dot(&phi);
        let jt = jac.transpose();
        let jtb = &jt * y;
        jtb * phi.transpose() - jt * r
    }

    fn hess_at(&self, x: &Vector, j: usize) -> Matrix {
        let (xj, _) = self.0.point(j);
        let phi = self.0.features(x, &xj);
        let q = phi.len();
        &phi * phi.transpose() + Matrix::identity(q, q) * self.0.config.mu_reg
    }

    fn mean<T, F>(&self, zero: T, f: F) -> T
    where
        T: std::ops::AddAssign + std::ops::Div<f64, Output = T>,
        F: Fn(usize) -> T,
    {
        let n = self.0.config.n_train;
        let mut acc = zero;
        for j in 0..n {
            acc += f(j);
        }
        acc / n as f64
    }
}

impl LowerObjective for DroLower {
    fn x_dim(&self) -> usize {
        self.0.p()
    }
    fn y_dim(&self) -> usize {
        self.0.q()
    }
    fn value(&self, x: &Vector, y: &Vector) -> f64 {
        let half_mse = self.mean(0.0, |j| {
            let (_, r) = self.parts(x, y, j);
            0.5 * r * r
        });
        half_mse + 0.5 * self.0.config.mu_reg * y.norm_squared()
    }
    fn grad_y(&self, x: &Vector, y: &Vector) -> Vector {
        self.mean(Vector::zeros(self.0.q()), |j| self.grad_at(x, y, j))
    }
    fn cross(&self, x: &Vector, y: &Vector) -> Matrix {
        self.mean(Matrix::zeros(self.0.p(), self.0.q()), |j| self.cross_at(x, y, j))
    }
    fn hess_yy(&self, x: &Vector, _y: &Vector) -> Matrix {
        let q = self.0.q();
        self.mean(Matrix::zeros(q, q), |j| self.hess_at(x, j))
    }
    fn sample_grad_y(&self, x: &Vector, y: &Vector, rng: &mut dyn RngCore) -> Vector {
        self.grad_at(x, y, self.0.draw(rng))
    }
    fn sample_cross(&self, x: &Vector, y: &Vector, rng: &mut dyn RngCore) -> Matrix {
        self.cross_at(x, y, self.0.draw(rng))
    }
    fn sample_hess_yy(&self, x: &Vector, _y: &Vector, rng: &mut dyn RngCore) -> Matrix {
        self.hess_at(x, self.0.draw(rng))
    }
    fn solve_y(&self, x: &Vector) -> Option<Vector> {
        self.0.ridge(x)
    }
}

/// Builds the regression instance. Per-level Lipschitz constants are not
/// available in closed form and are reported as NaN; `L_{∇g}` is the bound
/// `width + μ_reg` for the bounded tanh features and the Gram trace at
/// `θ₀` for linear features.
pub fn make_dro_regression(config: &DroConfig) -> Result<ProblemSpec, ProblemError> {
    let model = Arc::new(DroModel::new(config.clone())?);
    let q = model.q();
    let mu = config.mu_reg;
    let l_grad = match config.feature_map {
        FeatureMap::TwoLayerTanh { width } => width as f64 + mu,
        FeatureMap::Linear { .. } => {
            let n = config.n_train as f64;
            let trace: f64 = (0..config.n_train)
                .map(|j| model.features(&model.theta0, &model.train_x.row(j).transpose()).norm_squared())
                .sum::<f64>()
                / n;
            trace + mu
        }
    };
    let lower = LowerLevel {
        objective: Arc::new(DroLower(model.clone())),
        mu_g: mu,
        l_grad,
        l_hess: f64::NAN,
    };
    let levels = vec![
        CompositionLevel::new(
            1,
            Arc::new(RiskHead {
                lambda: config.lambda,
                eps_s: config.eps_s,
            }),
        ),
        CompositionLevel::new(2, Arc::new(DeviationLevel(model.clone()))),
        CompositionLevel::new(3, Arc::new(LossLevel(model.clone()))),
    ];
    let mut constants = SmoothnessConstants::from_levels(vec![f64::NAN; 3], vec![f64::NAN; 3], mu, l_grad, f64::NAN);
    constants.measured = true;
    let descriptor = InstanceDescriptor::Dro(config.clone());
    let mut spec = ProblemSpec::new(descriptor.id(), levels, lower, FeasibleSet::Free, constants, descriptor)?;
    spec.has_ground_truth = false;
    spec.x0 = model.theta0.clone();
    spec.dro = Some(model);
    debug_assert_eq!(spec.q(), q);
    Ok(spec)
}
