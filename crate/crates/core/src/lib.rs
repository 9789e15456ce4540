//! Stochastic approximation for nested compositional bi-level problems
//!
//! ```text
//! min_{x ∈ X}  Φ(x) = Ψ(x, y*(x)),   Ψ = f_1 ∘ f_2 ∘ … ∘ f_T,
//! s.t.         y*(x) = argmin_y g(x, y)
//! ```
//!
//! with smooth (possibly non-convex) levels `f_i` and a lower-level `g` that is
//! strongly convex in `y`. The crate provides
//!
//! - [`oracle`]: unbiased stochastic samplers for every quantity the method
//!   consumes, with seeded, reproducible randomness,
//! - [`nhe`]: the hypergradient estimator (Jacobian chain, Neumann-type
//!   recursion for the Hessian-inverse–vector product),
//! - [`bilinasa`]: the outer method with prox step, warm-started inner SGD,
//!   direction averaging and linearized chain tracking, plus two comparison
//!   arms,
//! - [`problems`]: test problems with exact ground truth and a
//!   distributionally robust regression instance,
//! - [`diagnostics`]: the optimality measure, estimator and inner-loop checks and trace
//!   output,
//! - [`harness`]: experiment configs, seeded multi-trial runs and the
//!   artifact writers behind the `bilinasa` command-line tool.

pub mod bilinasa;
pub mod diagnostics;
pub mod harness;
pub mod linalg;
pub mod nhe;
pub mod oracle;
pub mod problems;
pub mod rng;

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;
