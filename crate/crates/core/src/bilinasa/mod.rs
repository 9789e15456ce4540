//! The outer stochastic approximation method and its comparison arms.
//!
//! One outer iteration of [`run`] performs, in order:
//!
//! 1. `z_k = Π_X(x_k − d_k/β)`,
//! 2. `x_{k+1} = x_k + τ_k (z_k − x_k)`,
//! 3. `N` SGD steps on `g(x_{k+1}, ·)` warm-started at `y_k^{(N)}`,
//! 4. a hypergradient estimate `w_{k+1}` at `(x_k, y_k^{(N)}, u_k)`,
//! 5. `d_{k+1} = (1 − τ_k) d_k + τ_k w_{k+1}`,
//! 6. the linearized tracking update of `u^{(T)}, …, u^{(1)}`.

mod feasible;
mod run;
mod schedule;
mod steps;

pub use feasible::FeasibleSet;
pub use run::{
    calls_per_iteration, expected_calls, init_calls, run, run_arm, run_baseline_double_loop, run_single_level,
    AlgoState, RunError, RunSetup, DIVERGENCE_LIMIT,
};
pub use schedule::{Schedule, ScheduleError, StepRule, Validation};
pub use steps::{initial_chain, inner_loop, prox_step, track_chain, update_chain, update_direction};
