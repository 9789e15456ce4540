use serde::{Deserialize, Serialize};

use crate::oracle::OracleCalls;
use crate::Vector;

/// Which method produced a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    #[default]
    Bilinasa,
    BaselineDoubleLoop,
    SingleLevelNested,
}

impl Arm {
    pub fn name(&self) -> &'static str {
        match self {
            Arm::Bilinasa => "bilinasa",
            Arm::BaselineDoubleLoop => "baseline-double-loop",
            Arm::SingleLevelNested => "single-level-nested",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bilinasa" => Some(Arm::Bilinasa),
            "baseline-double-loop" => Some(Arm::BaselineDoubleLoop),
            "single-level-nested" => Some(Arm::SingleLevelNested),
            _ => None,
        }
    }
}

/// State summary at outer iteration `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub k: usize,
    pub tau: f64,
    /// Iterates are kept only when requested.
    pub x: Option<Vector>,
    pub y_start: Option<Vector>,
    pub y_end: Option<Vector>,
    /// `‖z_k − x_k‖²`.
    pub prox_sq: f64,
    /// `‖d_k‖²`.
    pub d_sq: f64,
    /// `‖d_k − ∇Φ(x_k)‖²`.
    pub d_err_sq: Option<f64>,
    /// `‖z_k − x_k‖² + ‖d_k − ∇Φ(x_k)‖²`.
    pub v_true: Option<f64>,
    /// `‖y_k^{(0)} − y*(x_k)‖²`.
    pub inner_err_sq: Option<f64>,
    /// `‖y_k^{(N)} − y*(x_k)‖²`.
    pub y_err_sq: Option<f64>,
    /// `‖u_k^{(i)} − f_i(u_k^{(i+1)})‖²` for `i = 1..=T`.
    pub tracking: Vec<f64>,
    /// `Ψ(x_k, y_k^{(N)})`.
    pub psi: f64,
    /// `Φ(x_k)`.
    pub phi: Option<f64>,
    /// `β²‖z_k − x_k‖² ≤ ‖d_k‖²`.
    pub prox_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    pub tau0: f64,
    pub gamma1: f64,
    pub c_gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub arm: Arm,
    pub instance: String,
    pub schedule: ScheduleSummary,
    /// Calls spent before the first outer iteration.
    pub init_calls: OracleCalls,
    pub calls: OracleCalls,
    pub diverged: bool,
    pub output_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub meta: RunMeta,
    pub records: Vec<RunRecord>,
    pub final_x: Vector,
    pub final_y: Vector,
}

impl RunTrace {
    pub fn output_record(&self) -> &RunRecord {
        &self.records[self.meta.output_index]
    }

    pub fn last(&self) -> &RunRecord {
        self.records.last().expect("a trace has at least one record")
    }

    /// `V_R` when ground truth is available.
    pub fn v_output(&self) -> Option<f64> {
        self.output_record().v_true
    }

    /// `E[V_R | trajectory] = Σ τ_k V_k / Σ τ_k`, the output-index draw
    /// integrated out. `None` if any `V_k` is missing.
    pub fn v_expected(&self) -> Option<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for r in &self.records {
            num += r.tau * r.v_true?;
            den += r.tau;
        }
        (den > 0.0).then(|| num / den)
    }

    pub fn prox_violations(&self) -> usize {
        self.records.iter().filter(|r| !r.prox_ok).count()
    }

    pub fn depth(&self) -> usize {
        self.records.first().map(|r| r.tracking.len()).unwrap_or(0)
    }
}
