//! Problem instances with exact derivatives and smoothness constants.
//!
//! Three families are provided:
//!
//! - [`quadratic`]: one quadratic upper level over a quadratic lower level,
//!   everything in closed form;
//! - [`nested`]: two or three smooth non-convex levels over a quadratic lower
//!   level;
//! - [`dro`]: mean semi-deviation regression with a learned feature map,
//!   resampled from a finite training set.

pub mod constants;
pub mod dro;
pub mod maps;
pub mod nested;
pub mod quadratic;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bilinasa::FeasibleSet;
use crate::linalg;
use crate::nhe::Chain;
use crate::oracle::{check_chain_dims, CompositionLevel, LowerLevel, OracleError};
use crate::{Matrix, Vector};

pub use constants::SmoothnessConstants;
pub use dro::{make_dro_regression, sample_shifted_covariates, DroConfig, DroModel, FeatureMap};
pub use nested::make_nested_composition;
pub use quadratic::make_quadratic_bilevel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("invalid dimensions: {0}")]
    InvalidDimension(String),
    #[error("conditioning {0} is invalid")]
    InvalidConditioning(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("lower-level Hessian is not positive definite at the probe point")]
    Singular,
    #[error("lower-level solve did not converge")]
    NoLowerSolution,
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Reproducible description of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum InstanceDescriptor {
    Quadratic {
        p: usize,
        q: usize,
        conditioning: f64,
        seed: u64,
    },
    Nested {
        depth: usize,
        p: usize,
        q: usize,
        hidden: usize,
        seed: u64,
    },
    Dro(DroConfig),
    Custom {
        name: String,
    },
}

impl InstanceDescriptor {
    pub fn build(&self) -> Result<ProblemSpec, ProblemError> {
        match self {
            InstanceDescriptor::Quadratic {
                p,
                q,
                conditioning,
                seed,
            } => make_quadratic_bilevel(*p, *q, *conditioning, *seed),
            InstanceDescriptor::Nested {
                depth,
                p,
                q,
                hidden,
                seed,
            } => make_nested_composition(*depth, nested::NestedDims { p: *p, q: *q, hidden: *hidden }, *seed),
            InstanceDescriptor::Dro(cfg) => make_dro_regression(cfg),
            InstanceDescriptor::Custom { name } => Err(ProblemError::InvalidParameter(format!(
                "custom instance '{name}' cannot be rebuilt from its descriptor"
            ))),
        }
    }

    /// Short identifier used in file names and summaries.
    pub fn id(&self) -> String {
        match self {
            InstanceDescriptor::Quadratic { p, q, conditioning, seed } => {
                format!("qb-p{p}-q{q}-c{conditioning}-s{seed}")
            }
            InstanceDescriptor::Nested { depth, p, q, hidden, seed } => {
                format!("nc{depth}-p{p}-q{q}-h{hidden}-s{seed}")
            }
            InstanceDescriptor::Dro(cfg) => format!("dro-{}-n{}-s{}", cfg.feature_map.name(), cfg.n_train, cfg.data_seed),
            InstanceDescriptor::Custom { name } => name.clone(),
        }
    }
}

/// `QB-1`: the shipped two-by-two quadratic instance.
pub fn qb1_descriptor() -> InstanceDescriptor {
    InstanceDescriptor::Quadratic {
        p: 2,
        q: 2,
        conditioning: 2.0,
        seed: 1,
    }
}

/// `NC-2`: the shipped depth-two nested instance.
pub fn nc2_descriptor() -> InstanceDescriptor {
    InstanceDescriptor::Nested {
        depth: 2,
        p: 2,
        q: 2,
        hidden: 3,
        seed: 2,
    }
}

pub fn qb1() -> ProblemSpec {
    qb1_descriptor().build().expect("QB-1 is well formed")
}

pub fn nc2() -> ProblemSpec {
    nc2_descriptor().build().expect("NC-2 is well formed")
}

/// A complete problem instance.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub id: String,
    pub levels: Vec<CompositionLevel>,
    pub lower: LowerLevel,
    pub feasible: FeasibleSet,
    pub constants: SmoothnessConstants,
    /// Whether `y*`, `Φ` and `∇Φ` are exact and cheap enough for per-iteration
    /// tracking.
    pub has_ground_truth: bool,
    pub descriptor: InstanceDescriptor,
    /// Default starting point for `x`.
    pub x0: Vector,
    /// Data and test-loss evaluation for regression instances.
    pub dro: Option<Arc<DroModel>>,
}

impl ProblemSpec {
    pub fn new(
        id: impl Into<String>,
        levels: Vec<CompositionLevel>,
        lower: LowerLevel,
        feasible: FeasibleSet,
        constants: SmoothnessConstants,
        descriptor: InstanceDescriptor,
    ) -> Result<Self, ProblemError> {
        check_chain_dims(&levels)?;
        let top = levels.last().ok_or_else(|| ProblemError::InvalidDimension("no levels".into()))?;
        let (p, q) = (lower.x_dim(), lower.y_dim());
        if top.input_dim() != p + q {
            return Err(ProblemError::InvalidDimension(format!(
                "top level takes {} inputs, lower level has p + q = {}",
                top.input_dim(),
                p + q
            )));
        }
        feasible.validate(p).map_err(ProblemError::InvalidParameter)?;
        Ok(Self {
            id: id.into(),
            levels,
            lower,
            feasible,
            constants,
            has_ground_truth: true,
            descriptor,
            x0: Vector::zeros(p),
            dro: None,
        })
    }

    pub fn p(&self) -> usize {
        self.lower.x_dim()
    }

    pub fn q(&self) -> usize {
        self.lower.y_dim()
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Inner values `f_i ∘ … ∘ f_T (x, y)` for `i = 1..=T`, i.e. the exact
    /// chain `u^{(1)}, …, u^{(T)}`.
    pub fn exact_chain(&self, x: &Vector, y: &Vector) -> Chain {
        let mut vals = vec![Vector::zeros(0); self.depth()];
        let mut z = linalg::concat(x, y);
        for level in self.levels.iter().rev() {
            z = level.map.value(&z);
            vals[level.index - 1] = z.clone();
        }
        Chain::new(vals)
    }

    pub fn psi(&self, x: &Vector, y: &Vector) -> f64 {
        self.exact_chain(x, y).get(1)[0]
    }

    /// `(∇_xΨ, ∇_yΨ)` stacked, by the exact chain rule.
    pub fn grad_psi(&self, x: &Vector, y: &Vector) -> Vector {
        let xy = linalg::concat(x, y);
        let chain = self.exact_chain(x, y);
        let points = chain.eval_points(&xy);
        let mut acc: Vector = self.levels[0].map.jacobian(&points[0]).column(0).into_owned();
        for (pos, level) in self.levels.iter().enumerate().skip(1) {
            acc = level.map.jacobian(&points[pos]) * acc;
        }
        acc
    }

    /// `y*(x)`: closed form when available, otherwise Newton's method on the
    /// exact lower level.
    pub fn y_star(&self, x: &Vector) -> Result<Vector, ProblemError> {
        if let Some(y) = self.lower.objective.solve_y(x) {
            return Ok(y);
        }
        let g = &self.lower.objective;
        let mut y = Vector::zeros(self.q());
        for _ in 0..100 {
            let grad = g.grad_y(x, &y);
            if grad.norm() <= 1e-13 * (1.0 + y.norm()) {
                return Ok(y);
            }
            let step = linalg::spd_solve(&g.hess_yy(x, &y), &grad).ok_or(ProblemError::Singular)?;
            y -= step;
        }
        if g.grad_y(x, &y).norm() <= 1e-9 {
            Ok(y)
        } else {
            Err(ProblemError::NoLowerSolution)
        }
    }

    pub fn phi(&self, x: &Vector) -> Result<f64, ProblemError> {
        let y = self.y_star(x)?;
        Ok(self.psi(x, &y))
    }

    pub fn grad_phi(&self, x: &Vector) -> Result<Vector, ProblemError> {
        analytic_hypergradient(self, x)
    }

    /// `‖u^{(i)} − f_i(u^{(i+1)})‖²` for `i = 1..=T`, with `u^{(T+1)} = (x, y)`.
    pub fn tracking_errors(&self, chain: &Chain, x: &Vector, y: &Vector) -> Vec<f64> {
        let xy = linalg::concat(x, y);
        let points = chain.eval_points(&xy);
        self.levels
            .iter()
            .zip(&points)
            .map(|(level, pt)| (chain.get(level.index) - level.map.value(pt)).norm_squared())
            .collect()
    }
}

/// `∇_xΨ − ∇²_{xy}g · [∇²_{yy}g]⁻¹ ∇_yΨ` at `(x, y*(x))`, by a direct solve.
pub fn analytic_hypergradient(spec: &ProblemSpec, x: &Vector) -> Result<Vector, ProblemError> {
    let y = spec.y_star(x)?;
    let grad = spec.grad_psi(x, &y);
    let (gx, gy) = linalg::split(&grad, spec.p());
    let g = &spec.lower.objective;
    let s = linalg::spd_solve(&g.hess_yy(x, &y), &gy).ok_or(ProblemError::Singular)?;
    let cross: Matrix = g.cross(x, &y);
    Ok(gx - cross * s)
}
