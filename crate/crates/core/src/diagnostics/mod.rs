//! Optimality measures, output-index sampling and empirical checks of the
//! estimator and convergence properties.

pub mod fd;
pub mod output;
mod trace;

pub use trace::{Arm, RunMeta, RunRecord, RunTrace, ScheduleSummary};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::bilinasa::AlgoState;
use crate::nhe::{self, Chain, NheConfig, NheError};
use crate::oracle::{NoiseModel, Oracle, OracleError};
use crate::problems::{ProblemError, ProblemSpec};
use crate::rng::RunStreams;
use crate::Vector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("empty step-size sequence")]
    EmptySequence,
    #[error("weight tau_{index} = {value} must be positive and finite")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Nhe(#[from] NheError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// `‖z − x‖² + ‖d − ∇Φ(x)‖²` from its two components.
pub fn optimality_value(prox_sq: f64, d_err_sq: f64) -> f64 {
    prox_sq + d_err_sq
}

/// `V = ‖z − x‖² + ‖d − ∇Φ(x)‖²` at the current state.
pub fn optimality_measure(state: &AlgoState, z: &Vector, grad_phi: &Vector) -> f64 {
    optimality_value((z - &state.x).norm_squared(), (&state.d - grad_phi).norm_squared())
}

/// Draws `R` with `P(R = k) = τ_k / Σ_j τ_j`.
pub fn draw_output_index(tau: &[f64], rng: &mut dyn RngCore) -> Result<usize, DiagnosticsError> {
    if tau.is_empty() {
        return Err(DiagnosticsError::EmptySequence);
    }
    if let Some((index, &value)) = tau.iter().enumerate().find(|(_, t)| !(t.is_finite() && **t > 0.0)) {
        return Err(DiagnosticsError::NonPositiveWeight { index, value });
    }
    let dist = WeightedIndex::new(tau).map_err(|e| DiagnosticsError::InvalidParameter(e.to_string()))?;
    Ok(dist.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasPoint {
    pub m: usize,
    pub bias: f64,
}

/// `‖r(M) − ∇Φ(x)‖` for each `M`, with exact oracles, the exact chain and
/// `y = y*(x)`.
pub fn neumann_bias_curve(
    problem: &ProblemSpec,
    x: &Vector,
    alpha: f64,
    ms: &[usize],
) -> Result<Vec<BiasPoint>, DiagnosticsError> {
    let y = problem.y_star(x)?;
    let chain = problem.exact_chain(x, &y);
    let truth = problem.grad_phi(x)?;
    let noise = NoiseModel::zero(problem.depth());
    let mut oracle = Oracle::new(&problem.levels, &problem.lower, &noise)?;
    let mut streams = RunStreams::new(0);
    ms.iter()
        .map(|&m| {
            let cfg = NheConfig::new(alpha, m)?;
            let r = nhe::estimate_hypergradient(&mut oracle, x, &y, &chain, &cfg, streams.nhe())?.r;
            Ok(BiasPoint {
                m,
                bias: (r - &truth).norm(),
            })
        })
        .collect()
}

/// Ordinary least-squares line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LineFit, DiagnosticsError> {
    if xs.len() != ys.len() {
        return Err(DiagnosticsError::InvalidParameter(format!(
            "{} abscissae and {} ordinates",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(DiagnosticsError::InsufficientData("a line needs two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(DiagnosticsError::InsufficientData("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LineFit { slope, intercept, r2 })
}

/// Fit of `ln bias` against `M`; the slope estimates `ln(1 − αμ_g)`.
pub fn bias_decay_fit(curve: &[BiasPoint]) -> Result<LineFit, DiagnosticsError> {
    if curve.iter().any(|p| !(p.bias > 0.0)) {
        return Err(DiagnosticsError::InvalidParameter("bias curve contains a zero".into()));
    }
    let xs: Vec<f64> = curve.iter().map(|p| p.m as f64).collect();
    let ys: Vec<f64> = curve.iter().map(|p| p.bias.ln()).collect();
    linear_fit(&xs, &ys)
}

/// One row of the truncation-estimator comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationRow {
    pub m: usize,
    pub uniform_mean: f64,
    pub uniform_var: f64,
    pub nhe_mean: f64,
    pub nhe_var: f64,
    /// `(1/M)(M/L − 1)²`, only when `M > L`.
    pub lower_bound: Option<f64>,
}

/// Compares two estimators of `1/A` for `A = 1` with samples
/// `A_i = 1 + noise_sd·ξ_i`:
///
/// - uniform truncation: `p ~ U{0, …, M−1}`, `X = (M/L) ∏_{i=1}^{p} (1 − A_i/L)`;
/// - the averaged recursion `r̄_n = (1 − A_n/L) r̄_{n−1} + 1/L`, `r̄_0 = 0`,
///   returning `r̄_M`.
pub fn truncation_counterexample(
    l: f64,
    ms: &[usize],
    trials: usize,
    noise_sd: f64,
    rng: &mut dyn RngCore,
) -> Result<Vec<TruncationRow>, DiagnosticsError> {
    if !(l > 1.0 && l.is_finite()) {
        return Err(DiagnosticsError::InvalidParameter(format!("L = {l} must exceed 1")));
    }
    if trials < 2 {
        return Err(DiagnosticsError::InsufficientData("need at least two trials".into()));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(DiagnosticsError::InvalidParameter(format!("noise sd {noise_sd}")));
    }
    let sample_a = |rng: &mut dyn RngCore| {
        if noise_sd == 0.0 {
            1.0
        } else {
            1.0 + noise_sd * rng.sample::<f64, _>(StandardNormal)
        }
    };
    let mut rows = Vec::with_capacity(ms.len());
    for &m in ms {
        if m == 0 {
            return Err(DiagnosticsError::InvalidParameter("M must be positive".into()));
        }
        let mut uniform = Vec::with_capacity(trials);
        let mut averaged = Vec::with_capacity(trials);
        for _ in 0..trials {
            let p = rng.random_range(0..m);
            let mut x = m as f64 / l;
            for _ in 0..p {
                x *= 1.0 - sample_a(rng) / l;
            }
            uniform.push(x);
            let mut r = 0.0;
            for _ in 0..m {
                r = (1.0 - sample_a(rng) / l) * r + 1.0 / l;
            }
            averaged.push(r);
        }
        let (uniform_mean, uniform_var) = mean_var(&uniform);
        let (nhe_mean, nhe_var) = mean_var(&averaged);
        let ratio = m as f64 / l;
        rows.push(TruncationRow {
            m,
            uniform_mean,
            uniform_var,
            nhe_mean,
            nhe_var,
            lower_bound: (ratio > 1.0).then(|| (ratio - 1.0).powi(2) / m as f64),
        });
    }
    Ok(rows)
}

/// Sample mean and unbiased sample variance, computed about the first value.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let shift = xs.first().copied().unwrap_or(0.0);
    let mean_shifted = xs.iter().map(|x| x - shift).sum::<f64>() / n;
    if xs.len() < 2 {
        return (shift + mean_shifted, 0.0);
    }
    let var = xs.iter().map(|x| (x - shift - mean_shifted).powi(2)).sum::<f64>() / (n - 1.0);
    (shift + mean_shifted, var)
}

/// Mean, standard deviation and a two-sided 90% Student-t interval.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SampleStats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub ci90_low: f64,
    pub ci90_high: f64,
}

impl SampleStats {
    pub fn from_values(xs: &[f64]) -> Result<Self, DiagnosticsError> {
        if xs.len() < 2 {
            return Err(DiagnosticsError::InsufficientData("need at least two values".into()));
        }
        let (mean, var) = mean_var(xs);
        let std = var.sqrt();
        let t = StudentsT::new(0.0, 1.0, (xs.len() - 1) as f64)
            .map_err(|e| DiagnosticsError::InvalidParameter(e.to_string()))?
            .inverse_cdf(0.95);
        let half = t * std / (xs.len() as f64).sqrt();
        Ok(Self {
            n: xs.len(),
            mean,
            std,
            ci90_low: mean - half,
            ci90_high: mean + half,
        })
    }

    pub fn overlaps(&self, other: &SampleStats) -> bool {
        self.ci90_low <= other.ci90_high && other.ci90_low <= self.ci90_high
    }
}

/// Log-log fit of mean `V_R` against `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub fit: LineFit,
    /// `(K, mean V_R)` in increasing `K`.
    pub means: Vec<(usize, f64)>,
}

impl RateFit {
    pub fn strictly_decreasing(&self) -> bool {
        self.means.windows(2).all(|w| w[1].1 < w[0].1)
    }
}

pub const MIN_RATE_GRID: usize = 3;
pub const MIN_RATE_SEEDS: usize = 10;

/// Least-squares fit of `ln E[V_R]` against `ln K`.
pub fn convergence_rate_fit(groups: &[(usize, Vec<f64>)]) -> Result<RateFit, DiagnosticsError> {
    let mut sorted: Vec<&(usize, Vec<f64>)> = groups.iter().collect();
    sorted.sort_by_key(|g| g.0);
    sorted.dedup_by_key(|g| g.0);
    if sorted.len() != groups.len() {
        return Err(DiagnosticsError::InvalidParameter("repeated K in the grid".into()));
    }
    if sorted.len() < MIN_RATE_GRID {
        return Err(DiagnosticsError::InsufficientData(format!(
            "{} values of K, need at least {MIN_RATE_GRID}",
            sorted.len()
        )));
    }
    if let Some((k, v)) = sorted.iter().map(|g| (g.0, &g.1)).find(|(_, v)| v.len() < MIN_RATE_SEEDS) {
        return Err(DiagnosticsError::InsufficientData(format!(
            "K = {k} has {} seeds, need at least {MIN_RATE_SEEDS}",
            v.len()
        )));
    }
    let means: Vec<(usize, f64)> = sorted
        .iter()
        .map(|(k, v)| (*k, v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    if means.iter().any(|(k, m)| *k == 0 || !(*m > 0.0)) {
        return Err(DiagnosticsError::InvalidParameter("K and mean V_R must be positive".into()));
    }
    let xs: Vec<f64> = means.iter().map(|(k, _)| (*k as f64).ln()).collect();
    let ys: Vec<f64> = means.iter().map(|(_, m)| m.ln()).collect();
    Ok(RateFit {
        fit: linear_fit(&xs, &ys)?,
        means,
    })
}

/// `σ_{r̄}² = 2σ̂_r²/μ_g²`.
pub fn sigma_rbar_sq(sigma_r_hat: f64, mu_g: f64) -> f64 {
    2.0 * sigma_r_hat * sigma_r_hat / (mu_g * mu_g)
}

/// `σ_w² = (σ̂_r + σ_{J_g} σ_{r̄})²`.
pub fn sigma_w_sq(sigma_r_hat: f64, sigma_jg: f64, mu_g: f64) -> f64 {
    (sigma_r_hat + sigma_jg * sigma_rbar_sq(sigma_r_hat, mu_g).sqrt()).powi(2)
}

/// Empirical moments of repeated estimator calls at a fixed point.
#[derive(Debug, Clone, PartialEq)]
pub struct NheMoments {
    pub draws: usize,
    pub mean_r: Vector,
    /// `E‖r − E r‖²`.
    pub var_r: f64,
    /// `E‖r‖²`.
    pub second_r: f64,
    /// `E‖r₀‖²`, the squared empirical `σ̂_r`.
    pub second_r0: f64,
    /// `E‖r₀ᵧ‖²`.
    pub second_r0y: f64,
    /// `E‖r̄_M‖²`.
    pub second_rbar: f64,
    /// `E‖J_g‖²` in the Frobenius norm, the squared empirical `σ_{J_g}`.
    pub second_cross: f64,
}

impl NheMoments {
    pub fn sigma_r_hat(&self) -> f64 {
        self.second_r0.sqrt()
    }

    pub fn sigma_jg(&self) -> f64 {
        self.second_cross.sqrt()
    }

    pub fn sigma_w_sq(&self, mu_g: f64) -> f64 {
        sigma_w_sq(self.sigma_r_hat(), self.sigma_jg(), mu_g)
    }

    /// `2 E‖r₀ᵧ‖² / μ_g²`.
    pub fn rbar_bound(&self, mu_g: f64) -> f64 {
        2.0 * self.second_r0y / (mu_g * mu_g)
    }
}

/// Moments of `draws` independent estimator calls at `(x, y)` along `chain`.
#[allow(clippy::too_many_arguments)]
pub fn nhe_moments(
    problem: &ProblemSpec,
    noise: &NoiseModel,
    x: &Vector,
    y: &Vector,
    chain: &Chain,
    config: &NheConfig,
    draws: usize,
    seed: u64,
) -> Result<NheMoments, DiagnosticsError> {
    if draws < 2 {
        return Err(DiagnosticsError::InsufficientData("need at least two draws".into()));
    }
    let mut oracle = Oracle::new(&problem.levels, &problem.lower, noise)?;
    let mut streams = RunStreams::new(seed);
    let mut rs = Vec::with_capacity(draws);
    let (mut s_r0, mut s_r0y, mut s_rbar, mut s_cross) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..draws {
        let out = nhe::estimate_hypergradient(&mut oracle, x, y, chain, config, streams.nhe())?;
        s_r0 += out.r0.norm_squared();
        s_r0y += out.r0y().norm_squared();
        s_rbar += out.rbar.norm_squared();
        s_cross += out.cross.norm_squared();
        rs.push(out.r);
    }
    let n = draws as f64;
    let mean_r = rs.iter().fold(Vector::zeros(x.len()), |acc, r| acc + r) / n;
    let var_r = rs.iter().map(|r| (r - &mean_r).norm_squared()).sum::<f64>() / (n - 1.0);
    let second_r = rs.iter().map(|r| r.norm_squared()).sum::<f64>() / n;
    Ok(NheMoments {
        draws,
        mean_r,
        var_r,
        second_r,
        second_r0: s_r0 / n,
        second_r0y: s_r0y / n,
        second_rbar: s_rbar / n,
        second_cross: s_cross / n,
    })
}

/// Mean of the per-level tracking errors over traces, indexed `[k][level]`.
/// Only iterations reached by every trace are included.
pub fn mean_tracking_curve(traces: &[RunTrace]) -> Vec<Vec<f64>> {
    let Some(len) = traces.iter().map(|t| t.records.len()).min() else {
        return Vec::new();
    };
    let n = traces.len() as f64;
    (0..len)
        .map(|k| {
            let depth = traces[0].records[k].tracking.len();
            (0..depth)
                .map(|i| traces.iter().map(|t| t.records[k].tracking[i]).sum::<f64>() / n)
                .collect()
        })
        .collect()
}

/// First iteration at which `curve[k][level] < fraction · curve[0][level]`.
pub fn first_below_fraction(curve: &[Vec<f64>], level: usize, fraction: f64) -> Option<usize> {
    let initial = curve.first()?.get(level).copied()?;
    curve.iter().position(|row| row[level] < fraction * initial)
}
