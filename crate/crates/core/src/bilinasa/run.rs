use rand::RngCore;
use thiserror::Error;

use super::schedule::{Schedule, ScheduleError, Validation};
use super::steps::{initial_chain, inner_loop, prox_step, track_chain, update_direction};
use crate::diagnostics::{self, Arm, RunMeta, RunRecord, RunTrace, ScheduleSummary};
use crate::linalg;
use crate::nhe::{self, Chain, NheError};
use crate::oracle::{NoiseModel, Oracle, OracleCalls, OracleError};
use crate::problems::{ProblemError, ProblemSpec};
use crate::rng::RunStreams;
use crate::Vector;

/// Norm above which a run counts as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Floating-point slack in the prox-bound check, relative to `‖d‖ + β‖x‖`.
const PROX_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Nhe(#[from] NheError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("invalid starting point: {0}")]
    Start(String),
}

/// Mutable state of the outer method.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgoState {
    pub x: Vector,
    /// `y^{(0)}, …, y^{(N)}` of the most recent inner loop.
    pub y_chain: Vec<Vector>,
    pub u: Chain,
    pub d: Vector,
    pub k: usize,
}

impl AlgoState {
    /// `y^{(N)}`, the lower-level iterate paired with `x`.
    pub fn y(&self) -> &Vector {
        self.y_chain.last().expect("non-empty inner chain")
    }

    pub fn y_start(&self) -> &Vector {
        &self.y_chain[0]
    }

    pub fn xy(&self) -> Vector {
        linalg::concat(&self.x, self.y())
    }

    pub fn is_diverged(&self) -> bool {
        let big = |v: &Vector| !linalg::is_finite(v) || v.norm() > DIVERGENCE_LIMIT;
        big(&self.x) || big(self.y()) || big(&self.d) || !(self.u.max_abs() <= DIVERGENCE_LIMIT)
    }
}

/// Everything a run needs besides its seed and starting point.
#[derive(Debug, Clone, Copy)]
pub struct RunSetup<'a> {
    pub problem: &'a ProblemSpec,
    pub noise: &'a NoiseModel,
    pub schedule: &'a Schedule,
    pub validation: Validation,
    pub keep_iterates: bool,
}

impl<'a> RunSetup<'a> {
    pub fn new(problem: &'a ProblemSpec, noise: &'a NoiseModel, schedule: &'a Schedule) -> Self {
        Self {
            problem,
            noise,
            schedule,
            validation: Validation::Theory,
            keep_iterates: false,
        }
    }

    pub fn validation(mut self, mode: Validation) -> Self {
        self.validation = mode;
        self
    }

    pub fn keep_iterates(mut self, keep: bool) -> Self {
        self.keep_iterates = keep;
        self
    }

    fn validate(&self, x0: &Vector, y0: &Vector) -> Result<(), RunError> {
        let lower = &self.problem.lower;
        self.schedule
            .validate(lower.mu_g, lower.l_grad, self.noise.effective_sigma_h(), self.validation)?;
        if x0.len() != self.problem.p() || y0.len() != self.problem.q() {
            return Err(RunError::Start(format!(
                "expected x in R^{} and y in R^{}, got {} and {}",
                self.problem.p(),
                self.problem.q(),
                x0.len(),
                y0.len()
            )));
        }
        if !self.problem.feasible.contains(x0, 1e-12) {
            return Err(RunError::Start("x0 lies outside the feasible set".into()));
        }
        Ok(())
    }

    fn summary(&self) -> ScheduleSummary {
        let s = self.schedule;
        ScheduleSummary {
            k: s.k,
            n: s.n,
            m: s.nhe.m,
            alpha: s.nhe.alpha,
            beta: s.beta,
            tau0: s.tau(0),
            gamma1: s.gamma(1.min(s.k)),
            c_gamma: s.c_gamma,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        k: usize,
        x: &Vector,
        z: &Vector,
        d: &Vector,
        y_start: &Vector,
        y_end: &Vector,
        chain: &Chain,
        bilevel_truth: bool,
    ) -> Result<RunRecord, RunError> {
        let p = self.problem;
        let beta = self.schedule.beta;
        let prox_sq = (z - x).norm_squared();
        let d_sq = d.norm_squared();
        let tracking_x = x.rows(0, p.p()).into_owned();
        let mut rec = RunRecord {
            k,
            tau: self.schedule.tau(k),
            x: self.keep_iterates.then(|| x.clone()),
            y_start: self.keep_iterates.then(|| y_start.clone()),
            y_end: self.keep_iterates.then(|| y_end.clone()),
            prox_sq,
            d_sq,
            d_err_sq: None,
            v_true: None,
            inner_err_sq: None,
            y_err_sq: None,
            tracking: p.tracking_errors(chain, &tracking_x, y_end),
            psi: p.psi(&tracking_x, y_end),
            phi: None,
            prox_ok: beta * prox_sq.sqrt() <= d_sq.sqrt() + PROX_SLACK * (d_sq.sqrt() + beta * x.norm()),
        };
        if bilevel_truth && p.has_ground_truth {
            let y_star = p.y_star(x)?;
            let grad = p.grad_phi(x)?;
            let d_err_sq = (d - grad).norm_squared();
            rec.d_err_sq = Some(d_err_sq);
            rec.v_true = Some(diagnostics::optimality_value(prox_sq, d_err_sq));
            rec.inner_err_sq = Some((y_start - &y_star).norm_squared());
            rec.y_err_sq = Some((y_end - &y_star).norm_squared());
            rec.phi = Some(p.psi(x, &y_star));
        }
        Ok(rec)
    }

    fn finish(
        &self,
        arm: Arm,
        seed: u64,
        records: Vec<RunRecord>,
        state: &AlgoState,
        init_calls: OracleCalls,
        calls: OracleCalls,
        diverged: bool,
        rng: &mut dyn RngCore,
    ) -> RunTrace {
        let taus: Vec<f64> = records.iter().map(|r| r.tau).collect();
        let output_index = diagnostics::draw_output_index(&taus, rng).unwrap_or(0);
        RunTrace {
            meta: RunMeta {
                seed,
                arm,
                instance: self.problem.id.clone(),
                schedule: self.summary(),
                init_calls,
                calls,
                diverged,
                output_index,
            },
            records,
            final_x: state.x.clone(),
            final_y: state.y().clone(),
        }
    }
}

/// Oracle calls of one outer iteration: `N + M + 3T + 1`.
pub fn calls_per_iteration(n: usize, m: usize, depth: usize) -> u64 {
    (n + m + 3 * depth + 1) as u64
}

/// Oracle calls spent on `u_0` and `d_0`: `M + 2T + 1`.
pub fn init_calls(m: usize, depth: usize) -> u64 {
    (m + 2 * depth + 1) as u64
}

/// Exact total oracle calls of a completed (non-diverged) run of `arm`.
pub fn expected_calls(arm: Arm, k: usize, n: usize, m: usize, depth: usize) -> u64 {
    let (k, n, m, t) = (k as u64, n as u64, m as u64, depth as u64);
    match arm {
        Arm::Bilinasa => init_calls(m as usize, depth as usize) + k * calls_per_iteration(n as usize, m as usize, depth as usize),
        Arm::BaselineDoubleLoop => (k + 1) * (m + 2 * t + 1) + k * n,
        Arm::SingleLevelNested => 2 * t + k * 3 * t,
    }
}

/// The outer method: prox step, averaged move, warm-started inner loop,
/// hypergradient estimate at the previous point, direction averaging and
/// linearized chain tracking.
pub fn run(setup: &RunSetup<'_>, x0: &Vector, y0: &Vector, seed: u64) -> Result<RunTrace, RunError> {
    setup.validate(x0, y0)?;
    let problem = setup.problem;
    let sched = setup.schedule;
    let mut oracle = Oracle::new(&problem.levels, &problem.lower, setup.noise)?;
    let mut streams = RunStreams::new(seed);

    let u = initial_chain(&mut oracle, &linalg::concat(x0, y0), &mut streams.init)?;
    let d = nhe::estimate_hypergradient(&mut oracle, x0, y0, &u, &sched.nhe, streams.nhe())?.r;
    let init_calls = oracle.calls();
    let mut state = AlgoState {
        x: x0.clone(),
        y_chain: vec![y0.clone()],
        u,
        d,
        k: 0,
    };

    let mut records = Vec::with_capacity(sched.k + 1);
    let mut diverged = false;
    for k in 0..=sched.k {
        state.k = k;
        if state.is_diverged() {
            diverged = true;
            break;
        }
        let z = prox_step(&state.x, &state.d, sched.beta, &problem.feasible);
        records.push(setup.record(k, &state.x, &z, &state.d, state.y_start(), state.y(), &state.u, true)?);
        if k == sched.k {
            break;
        }
        let tau = sched.tau(k);
        let x_new = &state.x + (&z - &state.x) * tau;
        let ys = inner_loop(&mut oracle, &x_new, state.y(), sched.gamma(k + 1), sched.n, &mut streams.inner)?;
        let w = nhe::estimate_hypergradient(&mut oracle, &state.x, state.y(), &state.u, &sched.nhe, streams.nhe())?;
        let d_new = update_direction(&state.d, &w.r, tau);
        let xy_old = state.xy();
        let xy_new = linalg::concat(&x_new, ys.last().expect("inner chain"));
        let u_new = track_chain(
            &mut oracle,
            &state.u,
            &xy_old,
            &xy_new,
            tau,
            &mut streams.chain_value,
            &mut streams.chain_jacobian,
        )?;
        state = AlgoState {
            x: x_new,
            y_chain: ys,
            u: u_new,
            d: d_new,
            k: k + 1,
        };
    }
    let calls = oracle.calls();
    Ok(setup.finish(Arm::Bilinasa, seed, records, &state, init_calls, calls, diverged, &mut streams.output_index))
}

/// Control arm: at every iteration the chain is rebuilt from fresh noisy
/// values and the step uses the raw hypergradient estimate, with no
/// direction averaging and no tracking.
pub fn run_baseline_double_loop(setup: &RunSetup<'_>, x0: &Vector, y0: &Vector, seed: u64) -> Result<RunTrace, RunError> {
    setup.validate(x0, y0)?;
    let problem = setup.problem;
    let sched = setup.schedule;
    let mut oracle = Oracle::new(&problem.levels, &problem.lower, setup.noise)?;
    let mut streams = RunStreams::new(seed);
    let mut state = AlgoState {
        x: x0.clone(),
        y_chain: vec![y0.clone()],
        u: Chain::new(Vec::new()),
        d: Vector::zeros(problem.p()),
        k: 0,
    };
    let mut records = Vec::with_capacity(sched.k + 1);
    let mut diverged = false;
    for k in 0..=sched.k {
        state.k = k;
        if !linalg::is_finite(&state.x) || state.x.norm() > DIVERGENCE_LIMIT || !linalg::is_finite(state.y()) {
            diverged = true;
            break;
        }
        state.u = initial_chain(&mut oracle, &state.xy(), &mut streams.chain_value)?;
        state.d = nhe::estimate_hypergradient(&mut oracle, &state.x, state.y(), &state.u, &sched.nhe, streams.nhe())?.r;
        if state.is_diverged() {
            diverged = true;
            break;
        }
        let z = prox_step(&state.x, &state.d, sched.beta, &problem.feasible);
        records.push(setup.record(k, &state.x, &z, &state.d, state.y_start(), state.y(), &state.u, true)?);
        if k == sched.k {
            break;
        }
        let x_new = &state.x + (&z - &state.x) * sched.tau(k);
        state.y_chain = inner_loop(&mut oracle, &x_new, state.y(), sched.gamma(k + 1), sched.n, &mut streams.inner)?;
        state.x = x_new;
    }
    let calls = oracle.calls();
    Ok(setup.finish(
        Arm::BaselineDoubleLoop,
        seed,
        records,
        &state,
        OracleCalls::default(),
        calls,
        diverged,
        &mut streams.output_index,
    ))
}

/// Single-level arm: `(x, y)` is optimized jointly on `Ψ` alone with the
/// same averaging and tracking; the lower level is ignored.
pub fn run_single_level(setup: &RunSetup<'_>, x0: &Vector, y0: &Vector, seed: u64) -> Result<RunTrace, RunError> {
    let basic = RunSetup {
        validation: Validation::Basic,
        ..*setup
    };
    basic.validate(x0, y0)?;
    let problem = setup.problem;
    let sched = setup.schedule;
    let p = problem.p();
    let mut oracle = Oracle::new(&problem.levels, &problem.lower, setup.noise)?;
    let mut streams = RunStreams::new(seed);
    let prox_joint = |xy: &Vector, d: &Vector| {
        let (x, y) = linalg::split(xy, p);
        let (dx, dy) = linalg::split(d, p);
        linalg::concat(&prox_step(&x, &dx, sched.beta, &problem.feasible), &(y - dy / sched.beta))
    };

    let mut xy = linalg::concat(x0, y0);
    let mut u = initial_chain(&mut oracle, &xy, &mut streams.init)?;
    let mut d = nhe::chain_seed(&mut oracle, &u.eval_points(&xy), &mut streams.nhe_chain)?;
    let init_calls = oracle.calls();
    let mut records = Vec::with_capacity(sched.k + 1);
    let mut diverged = false;
    for k in 0..=sched.k {
        let big = |v: &Vector| !linalg::is_finite(v) || v.norm() > DIVERGENCE_LIMIT;
        if big(&xy) || big(&d) || !(u.max_abs() <= DIVERGENCE_LIMIT) {
            diverged = true;
            break;
        }
        let z = prox_joint(&xy, &d);
        let (x, y) = linalg::split(&xy, p);
        let mut rec = setup.record(k, &xy, &z, &d, &y, &y, &u, false)?;
        if setup.keep_iterates {
            rec.x = Some(x);
        }
        records.push(rec);
        if k == sched.k {
            break;
        }
        let tau = sched.tau(k);
        let xy_new = &xy + (&z - &xy) * tau;
        let w = nhe::chain_seed(&mut oracle, &u.eval_points(&xy), &mut streams.nhe_chain)?;
        d = update_direction(&d, &w, tau);
        u = track_chain(&mut oracle, &u, &xy, &xy_new, tau, &mut streams.chain_value, &mut streams.chain_jacobian)?;
        xy = xy_new;
    }
    let (x, y) = linalg::split(&xy, p);
    let state = AlgoState {
        x,
        y_chain: vec![y],
        u,
        d: Vector::zeros(p),
        k: records.len().saturating_sub(1),
    };
    let calls = oracle.calls();
    Ok(setup.finish(
        Arm::SingleLevelNested,
        seed,
        records,
        &state,
        init_calls,
        calls,
        diverged,
        &mut streams.output_index,
    ))
}

pub fn run_arm(arm: Arm, setup: &RunSetup<'_>, x0: &Vector, y0: &Vector, seed: u64) -> Result<RunTrace, RunError> {
    match arm {
        Arm::Bilinasa => run(setup, x0, y0, seed),
        Arm::BaselineDoubleLoop => run_baseline_double_loop(setup, x0, y0, seed),
        Arm::SingleLevelNested => run_single_level(setup, x0, y0, seed),
    }
}
