//! Shifted-covariate comparison of the algorithm arms on a regression
//! instance.

use serde::{Deserialize, Serialize};

use super::config::{resolve, ExperimentConfig};
use super::experiment::{run_seeds, summarize, write_artifacts, write_json, Parallelism};
use super::HarnessError;
use crate::diagnostics::{Arm, SampleStats};
use crate::problems::InstanceDescriptor;

pub const MIN_DRO_SEEDS: usize = 10;
pub const COMPARISON_FILE: &str = "dro_comparison.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub arm: Arm,
    pub lambda: f64,
    pub a: f64,
    pub b: f64,
    /// Shifted test loss of the final iterate, one per non-diverged seed.
    pub losses: Vec<f64>,
    pub stats: Option<SampleStats>,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroComparison {
    pub instance: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<ComparisonRow>,
}

/// Outcome of robust-versus-non-robust at one shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCheck {
    pub robust: SampleStats,
    pub nonrobust: SampleStats,
    pub lower_mean: bool,
    pub disjoint_intervals: bool,
}

impl RobustnessCheck {
    pub fn passed(&self) -> bool {
        self.lower_mean && self.disjoint_intervals
    }
}

impl DroComparison {
    pub fn row(&self, arm: Arm, a: f64, b: f64) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.arm == arm && r.a == a && r.b == b)
    }

    /// Bilevel arm against the single-level arm at shift `(a, b)`.
    pub fn robustness(&self, a: f64, b: f64) -> Option<RobustnessCheck> {
        let robust = self.row(Arm::Bilinasa, a, b)?.stats?;
        let nonrobust = self.row(Arm::SingleLevelNested, a, b)?.stats?;
        Some(RobustnessCheck {
            robust,
            nonrobust,
            lower_mean: robust.mean < nonrobust.mean,
            disjoint_intervals: robust.ci90_high < nonrobust.ci90_low,
        })
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<22} {:>10} {:>10} {:>12} {:>12} {:>26}\n",
            "arm", "lambda", "(a,b)", "mean", "std", "90% CI"
        );
        for r in &self.rows {
            let shift = format!("({},{})", r.a, r.b);
            match r.stats {
                Some(s) => out.push_str(&format!(
                    "{:<22} {:>10.3e} {:>10} {:>12.6} {:>12.6} [{:>11.6}, {:>11.6}]\n",
                    r.arm.name(),
                    r.lambda,
                    shift,
                    s.mean,
                    s.std,
                    s.ci90_low,
                    s.ci90_high
                )),
                None => out.push_str(&format!(
                    "{:<22} {:>10.3e} {:>10} {:>12} ({} diverged)\n",
                    r.arm.name(),
                    r.lambda,
                    shift,
                    "n/a",
                    r.diverged
                )),
            }
        }
        out
    }
}

/// Runs every configured arm on the regression instance and tabulates the
/// shifted test loss at the final iterates. Traces go to `out/<arm>/`.
pub fn run_dro_comparison(config: &ExperimentConfig, par: Parallelism) -> Result<DroComparison, HarnessError> {
    if !matches!(config.instance, InstanceDescriptor::Dro(_)) {
        return Err(HarnessError::Config("dro-compare needs a regression instance (family = \"dro\")".into()));
    }
    if config.run.seeds.len() < MIN_DRO_SEEDS {
        return Err(HarnessError::Config(format!(
            "dro-compare needs at least {MIN_DRO_SEEDS} seeds, got {}",
            config.run.seeds.len()
        )));
    }
    let cmp = config.dro.clone().unwrap_or_default();
    let mut rows = Vec::new();
    for &arm in &cmp.arms {
        let mut cfg = config.clone();
        cfg.run.arm = arm;
        cfg.run.out = config.run.out.join(arm.name());
        if arm == Arm::SingleLevelNested {
            cfg.run.single_level_lambda = Some(cmp.single_level_lambda);
        }
        if let Some(s) = cmp.schedules.iter().find(|s| s.arm == arm) {
            cfg.schedule = s.schedule.clone();
        }
        let resolved = resolve(&cfg)?;
        let runs = run_seeds(&resolved, arm, par)?;
        let summary = summarize(&resolved, arm, &runs);
        let traces: Vec<_> = runs.into_iter().map(|(t, _)| t).collect();
        write_artifacts(&cfg.run.out, &resolved, &traces, &summary)?;
        let model = resolved
            .problem
            .dro
            .clone()
            .ok_or_else(|| HarnessError::Config("instance carries no regression data".into()))?;
        let lambda = model.config.lambda;
        for &[a, b] in &cmp.shifts {
            let mut losses = Vec::new();
            let mut diverged = 0;
            for t in &traces {
                if t.meta.diverged {
                    diverged += 1;
                    continue;
                }
                losses.push(model.shifted_test_loss(&t.final_x, &t.final_y, a, b)?);
            }
            rows.push(ComparisonRow {
                arm,
                lambda,
                a,
                b,
                stats: SampleStats::from_values(&losses).ok(),
                losses,
                diverged,
            });
        }
    }
    let result = DroComparison {
        instance: config.instance.id(),
        seeds: config.run.seeds.clone(),
        rows,
    };
    write_json(&config.run.out.join(COMPARISON_FILE), &result)?;
    Ok(result)
}
