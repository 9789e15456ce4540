use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nhe::{NheConfig, NheError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("beta must be positive and finite, got {0}")]
    Beta(f64),
    #[error("inner iteration count must be at least 1")]
    ZeroInner,
    #[error("tau_{k} = {value} is outside (0, 1]")]
    Tau { k: usize, value: f64 },
    #[error("gamma_{k} = {value} must be positive")]
    Gamma { k: usize, value: f64 },
    #[error("step sequence has {found} entries, need {needed}")]
    SequenceLength { needed: usize, found: usize },
    #[error("gamma_{k} = {gamma} is not below 2/(mu + L) = {bound}")]
    InnerStep { k: usize, gamma: f64, bound: f64 },
    #[error("tau is not non-increasing at k = {k}")]
    TauIncreasing { k: usize },
    #[error("gamma is not non-increasing at k = {k}")]
    GammaIncreasing { k: usize },
    #[error("coupling gamma_k <= c_gamma tau_k <= tau_k fails at k = {k}")]
    Coupling { k: usize },
    #[error("tau_0 = {0} must be strictly below 1")]
    TauZero(f64),
    #[error("N = {n} is below the required {required} at k = {k}")]
    InnerCount { k: usize, n: usize, required: usize },
    #[error(transparent)]
    Nhe(#[from] NheError),
}

/// A step-size sequence indexed by the outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    Constant(f64),
    Sequence(Vec<f64>),
}

impl StepRule {
    pub fn at(&self, k: usize) -> f64 {
        match self {
            StepRule::Constant(v) => *v,
            StepRule::Sequence(s) => s[k],
        }
    }

    fn check_len(&self, needed: usize) -> Result<(), ScheduleError> {
        if let StepRule::Sequence(s) = self {
            if s.len() < needed {
                return Err(ScheduleError::SequenceLength { needed, found: s.len() });
            }
        }
        Ok(())
    }
}

/// How strictly a schedule is checked against the problem constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Validation {
    /// Every step-size, coupling, inner-count and estimator condition needed
    /// for the convergence guarantee.
    #[default]
    Theory,
    /// Positivity, ranges and inner-loop stability only.
    Basic,
}

/// Tuning of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub k: usize,
    pub n: usize,
    pub beta: f64,
    /// `τ_k` for `k = 0..=K`.
    pub tau: StepRule,
    /// `γ_k` for `k = 0..=K`; the inner loop of iteration `k` uses `γ_{k+1}`.
    pub gamma: StepRule,
    pub c_gamma: f64,
    pub nhe: NheConfig,
}

impl Schedule {
    pub fn tau(&self, k: usize) -> f64 {
        self.tau.at(k)
    }

    pub fn gamma(&self, k: usize) -> f64 {
        self.gamma.at(k)
    }

    /// `τ_0, …, τ_K`.
    pub fn tau_sequence(&self) -> Vec<f64> {
        (0..=self.k).map(|k| self.tau(k)).collect()
    }

    /// Smallest `N` with `N ≥ (1 + 1/(1 − τ_1)) τ_k / (2 γ_k μ_g)` for all `k`.
    pub fn min_inner_steps(&self, mu_g: f64) -> usize {
        let tau1 = self.tau(1.min(self.k));
        let factor = 1.0 + 1.0 / (1.0 - tau1);
        (0..=self.k)
            .map(|k| (factor * self.tau(k) / (2.0 * self.gamma(k) * mu_g)).ceil() as usize)
            .max()
            .unwrap_or(1)
            .max(1)
    }

    pub fn validate(&self, mu_g: f64, l_grad_g: f64, sigma_h: f64, mode: Validation) -> Result<(), ScheduleError> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(ScheduleError::Beta(self.beta));
        }
        if self.n == 0 {
            return Err(ScheduleError::ZeroInner);
        }
        self.tau.check_len(self.k + 1)?;
        self.gamma.check_len(self.k + 1)?;
        let inner_bound = 2.0 / (mu_g + l_grad_g);
        for k in 0..=self.k {
            let (t, g) = (self.tau(k), self.gamma(k));
            if !(t > 0.0 && t <= 1.0) {
                return Err(ScheduleError::Tau { k, value: t });
            }
            if !(g > 0.0 && g.is_finite()) {
                return Err(ScheduleError::Gamma { k, value: g });
            }
            if k >= 1 && g >= inner_bound {
                return Err(ScheduleError::InnerStep { k, gamma: g, bound: inner_bound });
            }
        }
        if mode == Validation::Basic {
            return Ok(());
        }
        if self.tau(0) >= 1.0 {
            return Err(ScheduleError::TauZero(self.tau(0)));
        }
        for k in 0..=self.k {
            if k >= 1 {
                if self.tau(k) > self.tau(k - 1) {
                    return Err(ScheduleError::TauIncreasing { k });
                }
                if self.gamma(k) > self.gamma(k - 1) {
                    return Err(ScheduleError::GammaIncreasing { k });
                }
            }
            let coupled = self.c_gamma * self.tau(k);
            if self.gamma(k) > coupled || coupled > self.tau(k) {
                return Err(ScheduleError::Coupling { k });
            }
        }
        let required = self.min_inner_steps(mu_g);
        if self.n < required {
            return Err(ScheduleError::InnerCount {
                k: self.k,
                n: self.n,
                required,
            });
        }
        self.nhe.check(mu_g, l_grad_g, sigma_h)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Schedule {
        Schedule {
            k: 10,
            n: 3,
            beta: 1.0,
            tau: StepRule::Constant(0.1),
            gamma: StepRule::Constant(0.1),
            c_gamma: 1.0,
            nhe: NheConfig::new(0.25, 4).unwrap(),
        }
    }

    #[test]
    fn accepts_theory_schedule() {
        base().validate(1.0, 2.0, 0.0, Validation::Theory).unwrap();
    }

    #[test]
    fn inner_count_bound() {
        let mut s = base();
        s.n = 1;
        // (1 + 1/0.9) · 0.1 / (2 · 0.1 · 1) = 1.0556 → 2.
        assert_eq!(s.min_inner_steps(1.0), 2);
        assert!(matches!(
            s.validate(1.0, 2.0, 0.0, Validation::Theory),
            Err(ScheduleError::InnerCount { required: 2, .. })
        ));
        assert!(s.validate(1.0, 2.0, 0.0, Validation::Basic).is_ok());
    }

    #[test]
    fn rejects_increasing_and_uncoupled_steps() {
        let mut s = base();
        s.tau = StepRule::Sequence((0..=10).map(|k| 0.05 + 0.001 * k as f64).collect());
        s.gamma = StepRule::Constant(0.01);
        assert!(matches!(s.validate(1.0, 2.0, 0.0, Validation::Theory), Err(ScheduleError::TauIncreasing { .. })));
        let mut s = base();
        s.gamma = StepRule::Constant(0.2);
        assert!(matches!(s.validate(1.0, 2.0, 0.0, Validation::Theory), Err(ScheduleError::Coupling { .. })));
        let mut s = base();
        s.c_gamma = 1.5;
        assert!(matches!(s.validate(1.0, 2.0, 0.0, Validation::Theory), Err(ScheduleError::Coupling { .. })));
    }

    #[test]
    fn rejects_unstable_inner_step_even_in_basic_mode() {
        let mut s = base();
        s.gamma = StepRule::Constant(0.7);
        assert!(matches!(s.validate(1.0, 2.0, 0.0, Validation::Basic), Err(ScheduleError::InnerStep { .. })));
    }

    #[test]
    fn rejects_short_sequence_and_bad_ranges() {
        let mut s = base();
        s.tau = StepRule::Sequence(vec![0.1; 5]);
        assert!(matches!(s.validate(1.0, 2.0, 0.0, Validation::Basic), Err(ScheduleError::SequenceLength { .. })));
        let mut s = base();
        s.tau = StepRule::Constant(1.5);
        assert!(matches!(s.validate(1.0, 2.0, 0.0, Validation::Basic), Err(ScheduleError::Tau { .. })));
        let mut s = base();
        s.beta = 0.0;
        assert!(matches!(s.validate(1.0, 2.0, 0.0, Validation::Basic), Err(ScheduleError::Beta(_))));
    }

    #[test]
    fn theory_mode_checks_estimator() {
        let mut s = base();
        s.nhe = NheConfig::new(0.1, 2).unwrap();
        assert!(matches!(s.validate(1.0, 2.0, 0.0, Validation::Theory), Err(ScheduleError::Nhe(_))));
    }
}
