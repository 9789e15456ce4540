//! Nested hypergradient estimation.
//!
//! One call produces a stochastic estimate of
//! `∇_xΨ − ∇²_{xy}g · [∇²_{yy}g]⁻¹ ∇_yΨ` without forming or inverting any
//! matrix:
//!
//! 1. sample the transposed Jacobians of every level along the tracked chain
//!    and multiply them from the scalar end outward, giving `r₀ = (r₀ₓ, r₀ᵧ)`;
//! 2. run `M` steps of `r̄ ← (I − αH_n) r̄ + α r₀ᵧ` from `r̄ = 0`, each with a
//!    fresh Hessian sample;
//! 3. return `r₀ₓ − J_g r̄`.
//!
//! The expected output is biased by at most `(1 − αμ_g)^M` times a
//! constant, while its variance stays bounded independently of `M`.

use rand::RngCore;
use thiserror::Error;

use crate::linalg;
use crate::oracle::{Oracle, OracleError};
use crate::rng::NheStreams;
use crate::{Matrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NheError {
    #[error("step alpha must be positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("recursion length must be at least 1")]
    ZeroLength,
    #[error("alpha {alpha} violates the stability bound {bound}")]
    AlphaTooLarge { alpha: f64, bound: f64 },
    #[error("truncation factor (1 - alpha mu)^M = {delta} exceeds 1/2")]
    WeakTruncation { delta: f64 },
    #[error("Hessian sample has shape {rows}x{cols}, expected {q}x{q}")]
    HessianShape { rows: usize, cols: usize, q: usize },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Step and length of the Neumann-type recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NheConfig {
    pub alpha: f64,
    pub m: usize,
}

impl NheConfig {
    /// Positivity checks only.
    pub fn new(alpha: f64, m: usize) -> Result<Self, NheError> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(NheError::InvalidAlpha(alpha));
        }
        if m == 0 {
            return Err(NheError::ZeroLength);
        }
        Ok(Self { alpha, m })
    }

    /// Enforces `α < min{μ/(μ² + σ_H²), 1/L}` and `(1 − αμ)^M ≤ 1/2`.
    pub fn validated(alpha: f64, m: usize, mu_g: f64, l_grad: f64, sigma_h: f64) -> Result<Self, NheError> {
        let cfg = Self::new(alpha, m)?;
        cfg.check(mu_g, l_grad, sigma_h)?;
        Ok(cfg)
    }

    /// Default `α` (half the stability bound) with the smallest `M ≥ m_floor`
    /// that brings the truncation factor to at most 1/2.
    pub fn auto(mu_g: f64, l_grad: f64, sigma_h: f64, m_floor: usize) -> Self {
        let alpha = default_alpha(mu_g, l_grad, sigma_h);
        let m = m_floor.max(min_length_for_half(alpha, mu_g)).max(1);
        Self { alpha, m }
    }

    pub fn check(&self, mu_g: f64, l_grad: f64, sigma_h: f64) -> Result<(), NheError> {
        let bound = alpha_bound(mu_g, l_grad, sigma_h);
        if self.alpha >= bound {
            return Err(NheError::AlphaTooLarge {
                alpha: self.alpha,
                bound,
            });
        }
        let delta = self.delta_g(mu_g);
        if delta > 0.5 {
            return Err(NheError::WeakTruncation { delta });
        }
        Ok(())
    }

    /// `δ_g = (1 − αμ_g)^M`.
    pub fn delta_g(&self, mu_g: f64) -> f64 {
        (1.0 - self.alpha * mu_g).powi(self.m as i32)
    }
}

/// `min{μ/(μ² + σ_H²), 1/L}`.
pub fn alpha_bound(mu_g: f64, l_grad: f64, sigma_h: f64) -> f64 {
    (mu_g / (mu_g * mu_g + sigma_h * sigma_h)).min(1.0 / l_grad)
}

pub fn default_alpha(mu_g: f64, l_grad: f64, sigma_h: f64) -> f64 {
    0.5 * alpha_bound(mu_g, l_grad, sigma_h)
}

/// `⌊ln K⌋`, at least 1.
pub fn default_length(k_outer: usize) -> usize {
    if k_outer < 3 {
        return 1;
    }
    ((k_outer as f64).ln().floor() as usize).max(1)
}

/// Smallest `M` with `(1 − αμ)^M ≤ 1/2`.
pub fn min_length_for_half(alpha: f64, mu_g: f64) -> usize {
    let rate = 1.0 - alpha * mu_g;
    if rate <= 0.5 {
        return 1;
    }
    (0.5f64.ln() / rate.ln()).ceil() as usize
}

/// Tracked function values `u^{(1)}, …, u^{(T)}` with `u^{(i)} ∈ R^{d_{i-1}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    values: Vec<Vector>,
}

impl Chain {
    pub fn new(values: Vec<Vector>) -> Self {
        Self { values }
    }

    pub fn depth(&self) -> usize {
        self.values.len()
    }

    /// `u^{(i)}` for `i = 1..=T`.
    pub fn get(&self, i: usize) -> &Vector {
        &self.values[i - 1]
    }

    pub fn values(&self) -> &[Vector] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Vector> {
        self.values
    }

    /// Evaluation points of levels `1..=T`: `u^{(2)}, …, u^{(T)}, (x, y)`.
    pub fn eval_points(&self, xy: &Vector) -> Vec<Vector> {
        let mut pts: Vec<Vector> = self.values.iter().skip(1).cloned().collect();
        pts.push(xy.clone());
        pts
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |m, e| if e.is_finite() { m.max(e.abs()) } else { f64::INFINITY })
    }
}

/// Output of one estimator call.
#[derive(Debug, Clone, PartialEq)]
pub struct NheResult {
    /// Hypergradient estimate, `R^p`.
    pub r: Vector,
    /// Chain seed `(r₀ₓ, r₀ᵧ)`, `R^{p+q}`.
    pub r0: Vector,
    /// Final recursion state `r̄_M`, `R^q`.
    pub rbar: Vector,
    /// The `J_g` sample used in the final assembly.
    pub cross: Matrix,
}

impl NheResult {
    pub fn r0x(&self) -> Vector {
        self.r0.rows(0, self.r.len()).into_owned()
    }

    pub fn r0y(&self) -> Vector {
        let p = self.r.len();
        self.r0.rows(p, self.r0.len() - p).into_owned()
    }
}

/// Product of sampled transposed Jacobians `J^{(T)} ⋯ J^{(1)}`.
///
/// `points[i-1]` is the evaluation point of level `i`. The product is
/// accumulated as matrix–vector products starting from the scalar end.
pub fn chain_seed(oracle: &mut Oracle<'_>, points: &[Vector], rng: &mut dyn RngCore) -> Result<Vector, OracleError> {
    if points.len() != oracle.depth() {
        return Err(OracleError::ChainLength {
            expected: oracle.depth(),
            found: points.len(),
        });
    }
    let first = oracle.jacobian(1, &points[0], rng)?;
    let mut acc: Vector = first.column(0).into_owned();
    for (pos, point) in points.iter().enumerate().skip(1) {
        let j = oracle.jacobian(pos + 1, point, rng)?;
        acc = j * acc;
    }
    Ok(acc)
}

/// `M` steps of `r̄ ← (I − αH_n) r̄ + α r₀ᵧ` from zero, one fresh `H_n` per step.
pub fn neumann_recursion<F>(r0y: &Vector, config: &NheConfig, mut hessian: F) -> Result<Vector, NheError>
where
    F: FnMut() -> Result<Matrix, OracleError>,
{
    let q = r0y.len();
    let step = r0y * config.alpha;
    let mut rbar = Vector::zeros(q);
    for _ in 0..config.m {
        let h = hessian()?;
        if h.nrows() != q || h.ncols() != q {
            return Err(NheError::HessianShape {
                rows: h.nrows(),
                cols: h.ncols(),
                q,
            });
        }
        let hr = h * &rbar;
        rbar.axpy(-config.alpha, &hr, 1.0);
        rbar += &step;
    }
    Ok(rbar)
}

/// One hypergradient estimate at `(x, y)` along the tracked chain.
///
/// The chain seed, the cross-partial sample and each Hessian sample come
/// from separate streams, so all of them are mutually independent.
pub fn estimate_hypergradient(
    oracle: &mut Oracle<'_>,
    x: &Vector,
    y: &Vector,
    chain: &Chain,
    config: &NheConfig,
    streams: NheStreams<'_>,
) -> Result<NheResult, NheError> {
    let NheStreams { chain: chain_rng, cross: cross_rng, hessian: hess_rng } = streams;
    let p = x.len();
    let xy = linalg::concat(x, y);
    let points = chain.eval_points(&xy);
    let r0 = chain_seed(oracle, &points, chain_rng)?;
    let (r0x, r0y) = linalg::split(&r0, p);
    let rbar = neumann_recursion(&r0y, config, || oracle.hessian(x, y, hess_rng))?;
    let cross = oracle.cross(x, y, cross_rng)?;
    let r = r0x - &cross * &rbar;
    Ok(NheResult { r, r0, rbar, cross })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::NoiseModel;
    use crate::problems::quadratic::{self, QuadraticParts};
    use crate::rng::RunStreams;

    fn diag(v: &[f64]) -> Matrix {
        Matrix::from_diagonal(&Vector::from_row_slice(v))
    }

    #[test]
    fn config_rejects_bad_inputs() {
        assert!(matches!(NheConfig::new(0.0, 3), Err(NheError::InvalidAlpha(_))));
        assert!(matches!(NheConfig::new(f64::NAN, 3), Err(NheError::InvalidAlpha(_))));
        assert!(matches!(NheConfig::new(0.1, 0), Err(NheError::ZeroLength)));
        assert!(matches!(
            NheConfig::validated(1.0, 50, 1.0, 2.0, 0.0),
            Err(NheError::AlphaTooLarge { .. })
        ));
        assert!(matches!(
            NheConfig::validated(0.1, 1, 1.0, 2.0, 0.0),
            Err(NheError::WeakTruncation { .. })
        ));
        let ok = NheConfig::validated(0.25, 3, 1.0, 2.0, 0.0).unwrap();
        assert!(ok.delta_g(1.0) <= 0.5);
    }

    #[test]
    fn auto_config_meets_conditions() {
        for &(mu, l, s) in &[(1.0, 2.0, 0.0), (0.1, 5.0, 1.0), (2.0, 2.0, 0.3)] {
            let c = NheConfig::auto(mu, l, s, 1);
            c.check(mu, l, s).unwrap();
            assert_eq!(c.alpha, 0.5 * alpha_bound(mu, l, s));
        }
        assert_eq!(default_length(1000), 6);
        assert_eq!(default_length(0), 1);
    }

    #[test]
    fn recursion_from_zero_seed_stays_zero() {
        let cfg = NheConfig::new(0.3, 17).unwrap();
        let h = diag(&[1.0, 2.0]);
        let out = neumann_recursion(&Vector::zeros(2), &cfg, || Ok(h.clone())).unwrap();
        assert_eq!(out, Vector::zeros(2));
    }

    #[test]
    fn single_step_is_scaled_seed() {
        let cfg = NheConfig::new(0.3, 1).unwrap();
        let r0y = Vector::from_vec(vec![1.0, -2.0]);
        let h = diag(&[1.0, 2.0]);
        let out = neumann_recursion(&r0y, &cfg, || Ok(h.clone())).unwrap();
        assert_eq!(out, &r0y * 0.3);
    }

    #[test]
    fn recursion_matches_truncated_inverse() {
        // Closed form: (I - (I - αA)^M) A⁻¹ r, computed by explicit powers.
        let a = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r0y = Vector::from_vec(vec![0.7, -1.3]);
        let cfg = NheConfig::new(0.2, 9).unwrap();
        let out = neumann_recursion(&r0y, &cfg, || Ok(a.clone())).unwrap();
        let id = Matrix::identity(2, 2);
        let mut pow = id.clone();
        for _ in 0..9 {
            pow = &pow * (&id - &a * 0.2);
        }
        let expected = (&id - pow) * a.clone().try_inverse().unwrap() * &r0y;
        assert!((out - expected).norm() < 1e-13);
    }

    #[test]
    fn recursion_rejects_wrong_shape() {
        let cfg = NheConfig::new(0.2, 2).unwrap();
        let err = neumann_recursion(&Vector::zeros(2), &cfg, || Ok(Matrix::zeros(3, 3))).unwrap_err();
        assert!(matches!(err, NheError::HessianShape { .. }));
    }

    #[test]
    fn zero_cross_partial_returns_chain_seed_x_part() {
        let parts = QuadraticParts {
            a: Vector::from_vec(vec![1.0, -1.0]),
            b: Vector::from_vec(vec![0.5, 0.5]),
            c: Matrix::zeros(2, 2),
            lower_a: diag(&[1.0, 3.0]),
            lower_b: Matrix::zeros(2, 2),
        };
        let spec = quadratic::from_parts("sep", parts).unwrap();
        let noise = NoiseModel::zero(1);
        let mut oracle = Oracle::new(&spec.levels, &spec.lower, &noise).unwrap();
        let x = Vector::from_vec(vec![0.3, 0.2]);
        let y = Vector::from_vec(vec![1.0, 2.0]);
        let mut streams = RunStreams::new(1);
        for m in [1, 4, 30] {
            let cfg = NheConfig::new(0.2, m).unwrap();
            let res = estimate_hypergradient(&mut oracle, &x, &y, &Chain::new(vec![Vector::zeros(1)]), &cfg, streams.nhe())
                .unwrap();
            assert_eq!(res.r, res.r0x());
        }
    }

    #[test]
    fn output_assembles_from_its_parts() {
        let spec = quadratic::make_quadratic_bilevel(2, 3, 3.0, 5).unwrap();
        let noise = NoiseModel::gaussian(1, 0.3);
        let mut oracle = Oracle::new(&spec.levels, &spec.lower, &noise).unwrap();
        let x = Vector::from_vec(vec![0.3, -0.2]);
        let y = Vector::from_vec(vec![1.0, 0.0, 2.0]);
        let mut streams = RunStreams::new(9);
        let cfg = NheConfig::new(0.1, 6).unwrap();
        let res = estimate_hypergradient(&mut oracle, &x, &y, &Chain::new(vec![Vector::zeros(1)]), &cfg, streams.nhe())
            .unwrap();
        let expected = res.r0x() - &res.cross * &res.rbar;
        assert_eq!(res.r, expected);
        assert_eq!(oracle.calls().hessians, 6);
        assert_eq!(oracle.calls().cross, 1);
        assert_eq!(oracle.calls().jacobians, 1);
    }

    #[test]
    fn zero_noise_is_deterministic() {
        let spec = quadratic::make_quadratic_bilevel(2, 2, 2.0, 1).unwrap();
        let noise = NoiseModel::zero(1);
        let x = Vector::from_vec(vec![1.0, 1.0]);
        let y = Vector::from_vec(vec![0.5, -0.5]);
        let cfg = NheConfig::new(0.2, 8).unwrap();
        let chain = Chain::new(vec![Vector::zeros(1)]);
        let run = |seed| {
            let mut oracle = Oracle::new(&spec.levels, &spec.lower, &noise).unwrap();
            let mut s = RunStreams::new(seed);
            estimate_hypergradient(&mut oracle, &x, &y, &chain, &cfg, s.nhe()).unwrap()
        };
        assert_eq!(run(1), run(2));
    }
}
