//! Experiment configuration files.
//!
//! A config is a TOML document with the sections `[instance]`, `[schedule]`,
//! `[noise]`, `[feasible]`, `[start]`, `[run]` and the optional `[sweep]` and
//! `[dro]`. Every section except `[instance]` has defaults. [`resolve`]
//! turns a config into the objects a run needs and materializes every
//! default, so the echoed config reproduces the run exactly.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::bilinasa::{FeasibleSet, Schedule, StepRule, Validation};
use crate::diagnostics::Arm;
use crate::nhe::{self, NheConfig};
use crate::oracle::{NoiseKind, NoiseModel};
use crate::problems::{InstanceDescriptor, ProblemSpec};
use crate::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Keyword {
    Auto,
    /// `⌊ln K⌋`, at least 1.
    Log,
    /// `⌈ln K⌉`, at least 1.
    LogCeil,
}

/// A count given explicitly or by rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Count {
    Fixed(usize),
    Rule(Keyword),
}

/// A step given explicitly or by rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Step {
    Fixed(f64),
    Rule(Keyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TauRule {
    /// `τ_k = c_τ`.
    Constant,
    /// `τ_k = c_τ / √K`.
    #[default]
    InverseSqrtK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub k: usize,
    pub n: Count,
    pub m: Count,
    pub alpha: Step,
    pub beta: f64,
    pub c_tau: f64,
    pub tau_rule: TauRule,
    /// `γ_k = c_γ τ_k`.
    pub c_gamma: f64,
    pub validation: Validation,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            k: 500,
            n: Count::Rule(Keyword::Auto),
            m: Count::Rule(Keyword::Log),
            alpha: Step::Rule(Keyword::Auto),
            beta: 1.0,
            c_tau: 1.0,
            tau_rule: TauRule::InverseSqrtK,
            c_gamma: 1.0,
            validation: Validation::Theory,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    /// Shared scale for every output not set individually.
    pub sigma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_f: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_j: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_v: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_jg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_h: Option<f64>,
    pub symmetrize_hessian: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            sigma: 0.1,
            sigma_f: None,
            sigma_j: None,
            sigma_v: None,
            sigma_jg: None,
            sigma_h: None,
            symmetrize_hessian: true,
        }
    }
}

impl NoiseConfig {
    pub fn model(&self, depth: usize) -> NoiseModel {
        let s = self.sigma;
        NoiseModel {
            kind: self.kind,
            sigma_f: self.sigma_f.clone().unwrap_or_else(|| vec![s; depth]),
            sigma_j: self.sigma_j.clone().unwrap_or_else(|| vec![s; depth]),
            sigma_v: self.sigma_v.unwrap_or(s),
            sigma_jg: self.sigma_jg.unwrap_or(s),
            sigma_h: self.sigma_h.unwrap_or(s),
            symmetrize_hessian: self.symmetrize_hessian,
        }
    }

    fn materialized(&self, depth: usize) -> Self {
        let m = self.model(depth);
        Self {
            kind: self.kind,
            sigma: self.sigma,
            sigma_f: Some(m.sigma_f),
            sigma_j: Some(m.sigma_j),
            sigma_v: Some(m.sigma_v),
            sigma_jg: Some(m.sigma_jg),
            sigma_h: Some(m.sigma_h),
            symmetrize_hessian: self.symmetrize_hessian,
        }
    }
}

/// Starting point; defaults to the instance's `x0` and `y = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct StartConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub arm: Arm,
    /// Keep iterates in memory (they are not written to the CSV).
    pub keep_iterates: bool,
    /// Overrides the instance's `λ` for the single-level arm on regression
    /// instances.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub single_level_lambda: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1],
            out: PathBuf::from("out"),
            arm: Arm::Bilinasa,
            keep_iterates: false,
            single_level_lambda: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub ks: Vec<usize>,
    /// Accepted interval for the log-log slope of mean `V_R` against `K`.
    pub slope_range: [f64; 2],
    pub estimator: RateEstimator,
}

/// Per-seed estimate of `E[V_R]` entering the rate fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RateEstimator {
    /// `V` at the drawn output index.
    Sampled,
    /// `Σ τ_k V_k / Σ τ_k`, the draw integrated out.
    #[default]
    Conditional,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ks: vec![250, 1000, 4000],
            slope_range: [-0.8, -0.3],
            estimator: RateEstimator::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroCompareConfig {
    pub arms: Vec<Arm>,
    /// Covariate-shift exponents `(a, b)`.
    pub shifts: Vec<[f64; 2]>,
    /// `λ` used by the non-robust single-level arm.
    pub single_level_lambda: f64,
    /// Per-arm schedule overrides; arms not listed use `[schedule]`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub schedules: Vec<ArmSchedule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSchedule {
    pub arm: Arm,
    pub schedule: ScheduleConfig,
}

impl Default for DroCompareConfig {
    fn default() -> Self {
        Self {
            arms: vec![Arm::Bilinasa, Arm::BaselineDoubleLoop, Arm::SingleLevelNested],
            shifts: vec![[3.0, 6.0], [1.5, 4.5]],
            single_level_lambda: 0.0,
            schedules: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceDescriptor,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub feasible: FeasibleSet,
    #[serde(default)]
    pub start: StartConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dro: Option<DroCompareConfig>,
}

impl ExperimentConfig {
    pub fn new(instance: InstanceDescriptor) -> Self {
        Self {
            instance,
            schedule: ScheduleConfig::default(),
            noise: NoiseConfig::default(),
            feasible: FeasibleSet::Free,
            start: StartConfig::default(),
            run: RunConfig::default(),
            sweep: None,
            dro: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }
}

/// Everything needed to launch the runs of one config.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    /// The config with every default and rule replaced by its value.
    pub config: ExperimentConfig,
    pub problem: ProblemSpec,
    pub noise: NoiseModel,
    pub schedule: Schedule,
    pub x0: Vector,
    pub y0: Vector,
}

/// `τ_0` of a schedule config.
pub fn tau_value(cfg: &ScheduleConfig) -> f64 {
    match cfg.tau_rule {
        TauRule::Constant => cfg.c_tau,
        TauRule::InverseSqrtK => cfg.c_tau / (cfg.k.max(1) as f64).sqrt(),
    }
}

fn log_length(k: usize, ceil: bool) -> usize {
    if ceil {
        ((k.max(1) as f64).ln().ceil() as usize).max(1)
    } else {
        nhe::default_length(k)
    }
}

/// Builds the problem for `arm`, applying the single-level `λ` override.
pub fn build_problem(config: &ExperimentConfig, arm: Arm) -> Result<ProblemSpec, HarnessError> {
    let mut descriptor = config.instance.clone();
    if let (Arm::SingleLevelNested, Some(l), InstanceDescriptor::Dro(dro)) =
        (arm, config.run.single_level_lambda, &mut descriptor)
    {
        dro.lambda = l;
    }
    let mut problem = descriptor.build()?;
    problem.feasible = config.feasible.clone();
    problem
        .feasible
        .validate(problem.p())
        .map_err(|e| HarnessError::Config(format!("feasible: {e}")))?;
    Ok(problem)
}

/// Resolves rules and defaults against the instance.
pub fn resolve(config: &ExperimentConfig) -> Result<ResolvedExperiment, HarnessError> {
    let problem = build_problem(config, config.run.arm)?;
    let depth = problem.depth();
    let noise_cfg = config.noise.materialized(depth);
    let noise = noise_cfg.model(depth);
    noise.validate(depth).map_err(|e| HarnessError::Config(format!("noise: {e}")))?;

    let s = &config.schedule;
    let mu = problem.lower.mu_g;
    let l = problem.lower.l_grad;
    let sigma_h = noise.effective_sigma_h();
    let tau = tau_value(s);
    let alpha = match s.alpha {
        Step::Fixed(a) => a,
        Step::Rule(Keyword::Auto) => nhe::default_alpha(mu, l, sigma_h),
        Step::Rule(other) => {
            return Err(HarnessError::Config(format!("schedule.alpha: rule {other:?} is not defined for alpha")))
        }
    };
    let m = match s.m {
        Count::Fixed(m) => m,
        Count::Rule(Keyword::Log) => log_length(s.k, false),
        Count::Rule(Keyword::LogCeil) => log_length(s.k, true),
        Count::Rule(Keyword::Auto) => nhe::min_length_for_half(alpha, mu).max(log_length(s.k, false)),
    };
    let nhe_cfg = NheConfig::new(alpha, m).map_err(|e| HarnessError::Config(format!("schedule: {e}")))?;
    let mut schedule = Schedule {
        k: s.k,
        n: 1,
        beta: s.beta,
        tau: StepRule::Constant(tau),
        gamma: StepRule::Constant(s.c_gamma * tau),
        c_gamma: s.c_gamma,
        nhe: nhe_cfg,
    };
    schedule.n = match s.n {
        Count::Fixed(n) => n,
        Count::Rule(Keyword::Auto) => schedule.min_inner_steps(mu),
        Count::Rule(other) => return Err(HarnessError::Config(format!("schedule.n: rule {other:?} is not defined for N"))),
    };

    let x0 = match &config.start.x0 {
        Some(v) => Vector::from_vec(v.clone()),
        None => problem.x0.clone(),
    };
    let y0 = match &config.start.y0 {
        Some(v) => Vector::from_vec(v.clone()),
        None => Vector::zeros(problem.q()),
    };
    if x0.len() != problem.p() || y0.len() != problem.q() {
        return Err(HarnessError::Config(format!(
            "start: expected x0 of length {} and y0 of length {}",
            problem.p(),
            problem.q()
        )));
    }

    let mut resolved = config.clone();
    resolved.noise = noise_cfg;
    resolved.schedule.n = Count::Fixed(schedule.n);
    resolved.schedule.m = Count::Fixed(m);
    resolved.schedule.alpha = Step::Fixed(alpha);
    resolved.start = StartConfig {
        x0: Some(x0.iter().copied().collect()),
        y0: Some(y0.iter().copied().collect()),
    };
    Ok(ResolvedExperiment {
        config: resolved,
        problem,
        noise,
        schedule,
        x0,
        y0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems;

    const QB1: &str = r#"
[instance]
family = "quadratic"
p = 2
q = 2
conditioning = 2.0
seed = 1

[schedule]
k = 100
n = "auto"
m = "log-ceil"
alpha = "auto"
c_tau = 0.5

[noise]
sigma = 0.2

[run]
seeds = [1, 2, 3]
out = "target/qb1"
arm = "bilinasa"
"#;

    #[test]
    fn parses_and_resolves() {
        let cfg = ExperimentConfig::from_toml(QB1).unwrap();
        assert_eq!(cfg.instance, problems::qb1_descriptor());
        let r = resolve(&cfg).unwrap();
        // τ = 0.5/√100, α = ½ min{μ/(μ² + σ²), 1/L} with μ = 1, L = 2.
        assert!((r.schedule.tau(0) - 0.05).abs() < 1e-15);
        assert!((r.schedule.nhe.alpha - 0.25).abs() < 1e-12);
        assert_eq!(r.schedule.nhe.m, 5);
        assert_eq!(r.schedule.n, r.schedule.min_inner_steps(r.problem.lower.mu_g));
        assert_eq!(r.noise.sigma_f, vec![0.2]);
        assert_eq!(r.x0, r.problem.x0);
    }

    #[test]
    fn auto_alpha_with_noisy_hessian() {
        let mut cfg = ExperimentConfig::from_toml(QB1).unwrap();
        cfg.noise.sigma_h = Some(2.0);
        let r = resolve(&cfg).unwrap();
        // μ/(μ² + σ²) = 1/5 < 1/L = 1/2.
        assert!((r.schedule.nhe.alpha - 0.1).abs() < 1e-12);
    }

    #[test]
    fn round_trips_losslessly() {
        let cfg = ExperimentConfig::from_toml(QB1).unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let resolved = resolve(&cfg).unwrap().config;
        let echo = resolved.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&echo).unwrap();
        assert_eq!(back, resolved);
        let again = resolve(&back).unwrap();
        assert_eq!(again.schedule, resolve(&cfg).unwrap().schedule);
        assert_eq!(again.config, resolved);
    }

    #[test]
    fn dro_and_sweep_sections_round_trip() {
        let mut cfg = ExperimentConfig::new(InstanceDescriptor::Dro(Default::default()));
        cfg.sweep = Some(SweepConfig::default());
        cfg.dro = Some(DroCompareConfig::default());
        cfg.dro.as_mut().unwrap().schedules.push(ArmSchedule {
            arm: Arm::SingleLevelNested,
            schedule: ScheduleConfig::default(),
        });
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = QB1.replace("arm = \"bilinasa\"", "arm = \"adam\"");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("arm") || err.contains("adam"), "{err}");
        assert!(err.contains("line"), "{err}");
        let bad = QB1.replace("c_tau = 0.5", "c_tua = 0.5");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("c_tua"), "{err}");
        let bad = QB1.replace("n = \"auto\"", "n = \"log\"");
        let cfg = ExperimentConfig::from_toml(&bad).unwrap();
        assert!(resolve(&cfg).is_err());
    }

    #[test]
    fn start_dimension_checked() {
        let mut cfg = ExperimentConfig::from_toml(QB1).unwrap();
        cfg.start.x0 = Some(vec![1.0]);
        assert!(matches!(resolve(&cfg), Err(HarnessError::Config(_))));
    }

    #[test]
    fn single_level_lambda_override() {
        let mut dro = problems::DroConfig {
            n_train: 20,
            input_dim: 2,
            lambda: 0.5,
            ..Default::default()
        };
        dro.feature_map = problems::FeatureMap::Linear { width: 2 };
        let mut cfg = ExperimentConfig::new(InstanceDescriptor::Dro(dro));
        cfg.run.single_level_lambda = Some(0.0);
        let robust = build_problem(&cfg, Arm::Bilinasa).unwrap();
        let plain = build_problem(&cfg, Arm::SingleLevelNested).unwrap();
        let lambda = |p: &ProblemSpec| match &p.descriptor {
            InstanceDescriptor::Dro(c) => c.lambda,
            _ => unreachable!(),
        };
        assert_eq!(lambda(&robust), 0.5);
        assert_eq!(lambda(&plain), 0.0);
    }
}
