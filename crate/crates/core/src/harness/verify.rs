//! The diagnostics suite behind `bilinasa verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bilinasa::{inner_loop, run, FeasibleSet, RunSetup, Schedule, StepRule, Validation};
use crate::diagnostics::{self, fd};
use crate::nhe::{self, NheConfig};
use crate::oracle::{CompositionLevel, NoiseModel, Oracle};
use crate::problems::maps::LinearHead;
use crate::problems::quadratic::QuadraticLower;
use crate::problems::{self, ProblemSpec};
use crate::rng::RunStreams;
use crate::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }

    fn failed(name: &'static str, err: impl std::fmt::Display) -> Self {
        Self::new(name, false, format!("error: {err}"))
    }

    pub fn line(&self) -> String {
        format!("[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Ratio `‖y^{(N)} − y*‖ / ‖y^{(0)} − y*‖` for exact SGD on `g = ½‖y‖² − xᵀy`.
pub fn inner_contraction() -> CheckResult {
    const NAME: &str = "inner-loop contraction";
    let lower = match QuadraticLower::new(Matrix::identity(2, 2), Matrix::identity(2, 2)) {
        Ok(l) => l.into_lower(),
        Err(e) => return CheckResult::failed(NAME, e),
    };
    let levels = vec![CompositionLevel::new(
        1,
        std::sync::Arc::new(LinearHead {
            c: Vector::from_element(4, 1.0),
            c0: 0.0,
        }),
    )];
    let noise = NoiseModel::zero(1);
    let mut oracle = match Oracle::new(&levels, &lower, &noise) {
        Ok(o) => o,
        Err(e) => return CheckResult::failed(NAME, e),
    };
    let x = Vector::from_vec(vec![0.5, -1.5]);
    let y0 = Vector::from_vec(vec![3.0, 2.0]);
    let mut streams = RunStreams::new(0);
    let ys = match inner_loop(&mut oracle, &x, &y0, 0.1, 10, &mut streams.inner) {
        Ok(ys) => ys,
        Err(e) => return CheckResult::failed(NAME, e),
    };
    let ratio = (ys.last().expect("chain") - &x).norm() / (&y0 - &x).norm();
    let target = 0.9f64.powi(10);
    CheckResult::new(
        NAME,
        (ratio - target).abs() <= 1e-12,
        format!("ratio {ratio:.15}, 0.9^10 = {target:.15}"),
    )
}

/// Log-linear decay of the truncation bias on QB-1.
pub fn bias_decay() -> CheckResult {
    const NAME: &str = "estimator bias decay";
    let spec = problems::qb1();
    let mu = spec.lower.mu_g;
    let alpha = nhe::default_alpha(mu, spec.lower.l_grad, 0.0);
    let x = Vector::from_vec(vec![1.0, 1.0]);
    let ms: Vec<usize> = (20..=80).step_by(5).collect();
    let result = diagnostics::neumann_bias_curve(&spec, &x, alpha, &ms)
        .and_then(|c| diagnostics::bias_decay_fit(&c))
        .and_then(|fit| Ok((fit, diagnostics::neumann_bias_curve(&spec, &x, alpha, &[200])?[0].bias)));
    match result {
        Ok((fit, b200)) => {
            let target = (1.0 - alpha * mu).ln();
            let rel = ((fit.slope - target) / target).abs();
            CheckResult::new(
                NAME,
                rel <= 0.01 && b200 < 1e-6,
                format!(
                    "slope {:.6} vs ln(1 - alpha mu) = {target:.6} (rel {rel:.2e}); bias at M = 200: {b200:.2e}",
                    fit.slope
                ),
            )
        }
        Err(e) => CheckResult::failed(NAME, e),
    }
}

/// Parameters of the bounded-variance check.
pub const VARIANCE_SIGMA: f64 = 0.5;
pub const VARIANCE_MS: [usize; 4] = [1, 5, 25, 125];
pub const VARIANCE_DRAWS: usize = 10_000;

/// Empirical variance against `σ_w²` for several `M` on noisy QB-1.
pub fn bounded_variance() -> CheckResult {
    const NAME: &str = "estimator bounded variance";
    let spec = problems::qb1();
    let noise = NoiseModel::gaussian(1, VARIANCE_SIGMA);
    let mu = spec.lower.mu_g;
    let alpha = nhe::default_alpha(mu, spec.lower.l_grad, noise.sigma_h);
    let x = Vector::from_vec(vec![1.0, 1.0]);
    let y = match spec.y_star(&x) {
        Ok(y) => y,
        Err(e) => return CheckResult::failed(NAME, e),
    };
    let chain = spec.exact_chain(&x, &y);
    let mut vars = Vec::new();
    let mut ok = true;
    let mut detail = Vec::new();
    for (i, &m) in VARIANCE_MS.iter().enumerate() {
        let cfg = match NheConfig::new(alpha, m) {
            Ok(c) => c,
            Err(e) => return CheckResult::failed(NAME, e),
        };
        match diagnostics::nhe_moments(&spec, &noise, &x, &y, &chain, &cfg, VARIANCE_DRAWS, 100 + i as u64) {
            Ok(mom) => {
                let bound = mom.sigma_w_sq(mu);
                ok &= mom.var_r <= bound;
                detail.push(format!("M={m}: var {:.4} <= {:.4}", mom.var_r, bound));
                vars.push(mom.var_r);
            }
            Err(e) => return CheckResult::failed(NAME, e),
        }
    }
    let ratio = vars[3] / vars[1];
    ok &= ratio <= 1.2;
    detail.push(format!("var(125)/var(5) = {ratio:.4}"));
    CheckResult::new(NAME, ok, detail.join("; "))
}

/// Uniform-truncation variance against the averaged recursion.
pub fn truncation_counterexample() -> CheckResult {
    const NAME: &str = "uniform truncation counterexample";
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let ms = [20, 50, 100, 200];
    match diagnostics::truncation_counterexample(10.0, &ms, 100_000, 0.0, &mut rng) {
        Ok(rows) => {
            let at100 = rows.iter().find(|r| r.m == 100).expect("M = 100 row");
            let mut ok = at100.uniform_var > 0.81;
            let mut detail = vec![format!("M=100 uniform var {:.4} > 0.81", at100.uniform_var)];
            for r in &rows {
                ok &= r.uniform_var > r.nhe_var;
                detail.push(format!("M={}: {:.4} vs {:.2e}", r.m, r.uniform_var, r.nhe_var));
            }
            CheckResult::new(NAME, ok, detail.join("; "))
        }
        Err(e) => CheckResult::failed(NAME, e),
    }
}

/// Largest relative gap between the analytic hypergradient and central
/// differences of `x ↦ Ψ(x, y*(x))` over random probes.
pub fn max_fd_gap(spec: &ProblemSpec, probes: usize, seed: u64) -> Result<f64, crate::problems::ProblemError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let x = Vector::from_fn(spec.p(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let analytic = spec.grad_phi(&x)?;
        let numeric = fd::gradient(|z| spec.phi(z).unwrap_or(f64::NAN), &x, 1e-5);
        let gap = (&analytic - &numeric).norm() / analytic.norm().max(1e-8);
        worst = worst.max(if gap.is_finite() { gap } else { f64::INFINITY });
    }
    Ok(worst)
}

pub fn fd_ground_truth() -> CheckResult {
    const NAME: &str = "finite-difference ground truth";
    let mut detail = Vec::new();
    let mut ok = true;
    for (name, spec) in [("QB-1", problems::qb1()), ("NC-2", problems::nc2())] {
        match max_fd_gap(&spec, 20, 7) {
            Ok(gap) => {
                ok &= gap <= 1e-4;
                detail.push(format!("{name}: max rel gap {gap:.2e}"));
            }
            Err(e) => return CheckResult::failed(NAME, e),
        }
    }
    CheckResult::new(NAME, ok, detail.join("; "))
}

/// Zero-noise QB-1 with `K = 500`.
pub fn deterministic_optimization() -> CheckResult {
    const NAME: &str = "deterministic optimization";
    let spec = problems::qb1();
    let noise = NoiseModel::zero(1);
    let sched = Schedule {
        k: 500,
        n: 10,
        beta: 1.0,
        tau: StepRule::Constant(0.05),
        gamma: StepRule::Constant(0.05),
        c_gamma: 1.0,
        nhe: NheConfig {
            alpha: nhe::default_alpha(spec.lower.mu_g, spec.lower.l_grad, 0.0),
            m: 60,
        },
    };
    let x0 = Vector::from_element(2, 1.0);
    match run(&RunSetup::new(&spec, &noise, &sched), &x0, &Vector::zeros(2), 1) {
        Ok(t) => {
            let v = t.last().v_true.unwrap_or(f64::INFINITY);
            CheckResult::new(NAME, v < 1e-3, format!("final V = {v:.3e}"))
        }
        Err(e) => CheckResult::failed(NAME, e),
    }
}

/// `β²‖z_k − x_k‖² ≤ ‖d_k‖²` over noisy runs with several feasible sets.
pub fn projection_invariant() -> CheckResult {
    const NAME: &str = "projection invariant";
    let spec0 = problems::nc2();
    let noise = NoiseModel::gaussian(2, 0.3);
    let sets = [
        FeasibleSet::Free,
        FeasibleSet::unit_box(2),
        FeasibleSet::ball(vec![0.2, -0.1], 0.5),
    ];
    let mut violations = 0;
    let mut records = 0;
    for set in sets {
        let mut spec = spec0.clone();
        spec.feasible = set;
        for (beta, seed) in [(0.5, 1u64), (1.0, 2), (4.0, 3)] {
            let sched = Schedule {
                k: 200,
                n: 5,
                beta,
                tau: StepRule::Constant(0.1),
                gamma: StepRule::Constant(0.1),
                c_gamma: 1.0,
                nhe: NheConfig { alpha: 0.2, m: 5 },
            };
            let setup = RunSetup::new(&spec, &noise, &sched).validation(Validation::Basic);
            let x0 = spec.feasible.project(&Vector::from_vec(vec![0.3, 0.3]));
            match run(&setup, &x0, &Vector::zeros(2), seed) {
                Ok(t) => {
                    violations += t.prox_violations();
                    records += t.records.len();
                }
                Err(e) => return CheckResult::failed(NAME, e),
            }
        }
    }
    CheckResult::new(
        NAME,
        violations == 0,
        format!("{violations} violations over {records} iterations"),
    )
}

/// The quick suite, in order.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        inner_contraction(),
        bias_decay(),
        bounded_variance(),
        truncation_counterexample(),
        fd_ground_truth(),
        deterministic_optimization(),
        projection_invariant(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_checks_pass() {
        for c in [inner_contraction(), bias_decay(), fd_ground_truth(), projection_invariant()] {
            assert!(c.passed, "{}", c.line());
        }
    }

    #[test]
    fn line_format() {
        let c = CheckResult::new("x", false, "d".into());
        assert_eq!(c.line(), "[FAIL] x: d");
    }
}
