use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{resolve, ExperimentConfig, RateEstimator, ResolvedExperiment, SweepConfig};
use super::HarnessError;
use crate::bilinasa::{expected_calls, run_arm, RunSetup};
use crate::diagnostics::output::write_trace_csv;
use crate::diagnostics::{self, mean_var, Arm, RateFit, RunTrace};
use crate::oracle::OracleCalls;

/// Worker-pool size; `None` uses every core.
#[derive(Debug, Clone, Copy, Default)]
pub struct Parallelism {
    pub jobs: Option<usize>,
}

impl Parallelism {
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R, HarnessError> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(j) = self.jobs {
            builder = builder.num_threads(j.max(1));
        }
        let pool = builder.build().map_err(|e| HarnessError::Io(e.to_string()))?;
        Ok(pool.install(f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let (mean, var) = mean_var(values);
        Some(Self {
            n: values.len(),
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub records: usize,
    pub diverged: bool,
    pub output_index: usize,
    pub v_initial: Option<f64>,
    pub v_output: Option<f64>,
    /// `V` averaged over the output-index distribution.
    pub v_expected: Option<f64>,
    pub v_final: Option<f64>,
    pub psi_final: f64,
    pub prox_violations: usize,
    pub calls: OracleCalls,
    pub init_calls: OracleCalls,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub instance: String,
    pub arm: Arm,
    pub seeds: Vec<u64>,
    pub diverged_seeds: Vec<u64>,
    /// Over non-diverged seeds.
    pub v_output: Option<MeanStd>,
    pub v_expected: Option<MeanStd>,
    pub v_initial: Option<MeanStd>,
    pub v_final: Option<MeanStd>,
    pub psi_final: Option<MeanStd>,
    /// Calls of a completed run by the closed-form count.
    pub expected_calls: u64,
    /// Whether every completed run used exactly `expected_calls`.
    pub calls_match: bool,
    pub prox_violations: usize,
    pub per_seed: Vec<SeedSummary>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub summary: ExperimentSummary,
    pub traces: Vec<RunTrace>,
}

impl ExperimentOutcome {
    /// Completed runs with no prox-bound violations and exact call counts.
    pub fn checks_pass(&self) -> bool {
        self.summary.prox_violations == 0 && self.summary.calls_match
    }
}

pub fn trace_file_name(seed: u64) -> String {
    format!("trace_seed{seed}.csv")
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

/// Runs every seed of a resolved experiment in parallel; results keep seed order.
pub fn run_seeds(
    resolved: &ResolvedExperiment,
    arm: Arm,
    par: Parallelism,
) -> Result<Vec<(RunTrace, f64)>, HarnessError> {
    let cfg = &resolved.config;
    let setup = RunSetup::new(&resolved.problem, &resolved.noise, &resolved.schedule)
        .validation(cfg.schedule.validation)
        .keep_iterates(cfg.run.keep_iterates);
    let results: Vec<_> = par.install(|| {
        cfg.run
            .seeds
            .par_iter()
            .map(|&seed| {
                let start = Instant::now();
                let trace = run_arm(arm, &setup, &resolved.x0, &resolved.y0, seed)?;
                Ok::<_, HarnessError>((trace, start.elapsed().as_secs_f64()))
            })
            .collect()
    })?;
    results.into_iter().collect()
}

pub fn summarize(resolved: &ResolvedExperiment, arm: Arm, runs: &[(RunTrace, f64)]) -> ExperimentSummary {
    let s = &resolved.schedule;
    let expected = expected_calls(arm, s.k, s.n, s.nhe.m, resolved.problem.depth());
    let per_seed: Vec<SeedSummary> = runs
        .iter()
        .map(|(t, wall)| SeedSummary {
            seed: t.meta.seed,
            records: t.records.len(),
            diverged: t.meta.diverged,
            output_index: t.meta.output_index,
            v_initial: t.records.first().and_then(|r| r.v_true),
            v_output: t.v_output(),
            v_expected: t.v_expected(),
            v_final: t.last().v_true,
            psi_final: t.last().psi,
            prox_violations: t.prox_violations(),
            calls: t.meta.calls,
            init_calls: t.meta.init_calls,
            wall_time_s: *wall,
        })
        .collect();
    let ok: Vec<&SeedSummary> = per_seed.iter().filter(|s| !s.diverged).collect();
    let stat = |f: &dyn Fn(&SeedSummary) -> Option<f64>| {
        let vals: Vec<f64> = ok.iter().filter_map(|s| f(s)).collect();
        MeanStd::of(&vals)
    };
    ExperimentSummary {
        instance: resolved.problem.id.clone(),
        arm,
        seeds: per_seed.iter().map(|s| s.seed).collect(),
        diverged_seeds: per_seed.iter().filter(|s| s.diverged).map(|s| s.seed).collect(),
        v_output: stat(&|s| s.v_output),
        v_expected: stat(&|s| s.v_expected),
        v_initial: stat(&|s| s.v_initial),
        v_final: stat(&|s| s.v_final),
        psi_final: stat(&|s| Some(s.psi_final)),
        expected_calls: expected,
        calls_match: ok.iter().all(|s| s.calls.total() == expected),
        prox_violations: per_seed.iter().map(|s| s.prox_violations).sum(),
        per_seed,
    }
}

/// Writes one CSV per seed, the summary and the resolved config into `dir`.
pub fn write_artifacts(
    dir: &Path,
    resolved: &ResolvedExperiment,
    traces: &[RunTrace],
    summary: &ExperimentSummary,
) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for t in traces {
        let path = dir.join(trace_file_name(t.meta.seed));
        let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        write_trace_csv(t, std::io::BufWriter::new(file)).map_err(|e| io_err(&path, e))?;
    }
    write_json(&dir.join(SUMMARY_FILE), summary)?;
    let path = dir.join(RESOLVED_CONFIG_FILE);
    fs::write(&path, resolved.config.to_toml()?).map_err(|e| io_err(&path, e))
}

/// Resolves `config`, runs every seed and writes the artifacts to `run.out`.
pub fn run_experiment(config: &ExperimentConfig, par: Parallelism) -> Result<ExperimentOutcome, HarnessError> {
    let resolved = resolve(config)?;
    let arm = config.run.arm;
    let runs = run_seeds(&resolved, arm, par)?;
    let summary = summarize(&resolved, arm, &runs);
    let traces: Vec<RunTrace> = runs.into_iter().map(|(t, _)| t).collect();
    let dir = config.run.out.clone();
    write_artifacts(&dir, &resolved, &traces, &summary)?;
    Ok(ExperimentOutcome { dir, summary, traces })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub m: usize,
    pub tau: f64,
    /// Per-seed estimates of `E[V_R]`, non-diverged seeds only.
    pub v: Vec<f64>,
    pub mean_v: Option<f64>,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub estimator: RateEstimator,
    pub points: Vec<SweepPoint>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r2: Option<f64>,
    pub slope_range: [f64; 2],
    pub strictly_decreasing: bool,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub const SWEEP_FILE: &str = "sweep.json";

/// Runs `config` once per `K` of the sweep grid (into `out/K<k>`) and fits
/// the log-log rate of mean `V_R`.
pub fn sweep(config: &ExperimentConfig, par: Parallelism) -> Result<SweepReport, HarnessError> {
    let grid = config.sweep.clone().unwrap_or_default();
    let SweepConfig { ks, slope_range, estimator } = grid;
    let mut points = Vec::with_capacity(ks.len());
    for &k in &ks {
        let mut cfg = config.clone();
        cfg.schedule.k = k;
        cfg.run.out = config.run.out.join(format!("K{k}"));
        let out = run_experiment(&cfg, par)?;
        let v: Vec<f64> = out
            .summary
            .per_seed
            .iter()
            .filter(|s| !s.diverged)
            .filter_map(|s| match estimator {
                RateEstimator::Sampled => s.v_output,
                RateEstimator::Conditional => s.v_expected,
            })
            .collect();
        let resolved = resolve(&cfg)?;
        points.push(SweepPoint {
            k,
            m: resolved.schedule.nhe.m,
            tau: resolved.schedule.tau(0),
            mean_v: MeanStd::of(&v).map(|m| m.mean),
            v,
            diverged: out.summary.diverged_seeds.len(),
        });
    }
    let groups: Vec<(usize, Vec<f64>)> = points.iter().map(|p| (p.k, p.v.clone())).collect();
    let report = match diagnostics::convergence_rate_fit(&groups) {
        Ok(RateFit { fit, means }) => {
            let decreasing = means.windows(2).all(|w| w[1].1 < w[0].1);
            let in_range = fit.slope >= slope_range[0] && fit.slope <= slope_range[1];
            SweepReport {
                estimator,
                points,
                slope: Some(fit.slope),
                intercept: Some(fit.intercept),
                r2: Some(fit.r2),
                slope_range,
                strictly_decreasing: decreasing,
                passed: in_range && decreasing,
                error: None,
            }
        }
        Err(e) => SweepReport {
            estimator,
            points,
            slope: None,
            intercept: None,
            r2: None,
            slope_range,
            strictly_decreasing: false,
            passed: false,
            error: Some(e.to_string()),
        },
    };
    fs::create_dir_all(&config.run.out).map_err(|e| io_err(&config.run.out, e))?;
    write_json(&config.run.out.join(SWEEP_FILE), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{Count, Step};
    use crate::problems;

    fn qb1_config(dir: &Path, k: usize, seeds: Vec<u64>) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(problems::qb1_descriptor());
        cfg.schedule.k = k;
        cfg.schedule.c_tau = 0.05;
        cfg.schedule.tau_rule = crate::harness::config::TauRule::Constant;
        cfg.schedule.m = Count::Fixed(20);
        cfg.schedule.alpha = Step::Fixed(0.25);
        cfg.run.seeds = seeds;
        cfg.run.out = dir.to_path_buf();
        cfg
    }

    #[test]
    fn zero_iterations_single_row() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = qb1_config(dir.path(), 0, vec![1]);
        let out = run_experiment(&cfg, Parallelism::default()).unwrap();
        let text = fs::read_to_string(dir.path().join(trace_file_name(1))).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(dir.path().join(SUMMARY_FILE).exists());
        assert!(dir.path().join(RESOLVED_CONFIG_FILE).exists());
        assert_eq!(out.summary.per_seed[0].records, 1);
    }

    #[test]
    fn smoke_run_improves_on_start() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = qb1_config(dir.path(), 300, vec![1, 2, 3, 4]);
        let out = run_experiment(&cfg, Parallelism { jobs: Some(2) }).unwrap();
        let v = out.summary.v_output.unwrap();
        assert!(v.mean.is_finite());
        assert!(v.mean < out.summary.v_initial.unwrap().mean);
        assert!(out.checks_pass());
        assert!(out.summary.diverged_seeds.is_empty());
    }

    #[test]
    fn artifacts_are_byte_identical_across_reruns_and_thread_counts() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_experiment(&qb1_config(a.path(), 50, vec![3, 1, 2]), Parallelism { jobs: Some(1) }).unwrap();
        run_experiment(&qb1_config(b.path(), 50, vec![3, 1, 2]), Parallelism { jobs: Some(3) }).unwrap();
        for seed in [1, 2, 3] {
            let fa = fs::read(a.path().join(trace_file_name(seed))).unwrap();
            let fb = fs::read(b.path().join(trace_file_name(seed))).unwrap();
            assert_eq!(fa, fb);
        }
    }

    #[test]
    fn resolved_config_reproduces_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = qb1_config(dir.path(), 40, vec![5]);
        cfg.schedule.n = Count::Rule(crate::harness::config::Keyword::Auto);
        run_experiment(&cfg, Parallelism::default()).unwrap();
        let echo = ExperimentConfig::load(&dir.path().join(RESOLVED_CONFIG_FILE)).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let mut echo = echo;
        echo.run.out = dir2.path().to_path_buf();
        run_experiment(&echo, Parallelism::default()).unwrap();
        assert_eq!(
            fs::read(dir.path().join(trace_file_name(5))).unwrap(),
            fs::read(dir2.path().join(trace_file_name(5))).unwrap()
        );
    }

    #[test]
    fn diverged_seed_recorded_and_others_continue() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = qb1_config(dir.path(), 200, vec![1, 2]);
        cfg.schedule.beta = 0.01;
        cfg.schedule.c_tau = 1.0;
        cfg.schedule.c_gamma = 0.3;
        cfg.schedule.n = Count::Fixed(5);
        cfg.schedule.validation = crate::bilinasa::Validation::Basic;
        let out = run_experiment(&cfg, Parallelism::default()).unwrap();
        assert_eq!(out.summary.diverged_seeds, vec![1, 2]);
        assert!(out.summary.v_output.is_none());
        assert!(dir.path().join(trace_file_name(2)).exists());
    }

    #[test]
    fn sweep_needs_enough_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = qb1_config(dir.path(), 10, vec![1, 2]);
        cfg.sweep = Some(SweepConfig {
            ks: vec![10, 20, 40],
            slope_range: [-0.8, -0.3],
            ..SweepConfig::default()
        });
        let report = sweep(&cfg, Parallelism::default()).unwrap();
        assert!(!report.passed);
        assert!(report.error.unwrap().contains("seeds"));
        assert!(dir.path().join("K20").join(trace_file_name(1)).exists());
        assert!(dir.path().join(SWEEP_FILE).exists());
    }
}
