//! Nested non-convex compositions over a quadratic lower level.
//!
//! Depth 2: `Ψ = head ∘ tanh(W(x, y) + c)`.
//! Depth 3: `Ψ = head ∘ tanh(W₂ · + c₂) ∘ (W₃(x, y) + c₃)`.
//! The head is `z ↦ √(1 + ‖z − e‖²)`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::maps::{AffineMap, SmoothMap, SmoothNormHead, TanhAffineMap};
use super::quadratic::{conditioned_spd, QuadraticLower};
use super::{InstanceDescriptor, ProblemError, ProblemSpec, SmoothnessConstants};
use crate::bilinasa::FeasibleSet;
use crate::oracle::{CompositionLevel, LevelMap};
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NestedDims {
    pub p: usize,
    pub q: usize,
    pub hidden: usize,
}

/// Builds a spec from maps listed outermost first (`f_1, …, f_T`).
pub fn from_maps(
    id: &str,
    maps: Vec<Arc<dyn SmoothMap>>,
    lower: QuadraticLower,
    descriptor: InstanceDescriptor,
) -> Result<ProblemSpec, ProblemError> {
    let l_f: Vec<f64> = maps.iter().map(|m| m.lipschitz()).collect();
    let l_grad_f: Vec<f64> = maps.iter().map(|m| m.grad_lipschitz()).collect();
    let lower = lower.into_lower();
    let constants = SmoothnessConstants::from_levels(l_f, l_grad_f, lower.mu_g, lower.l_grad, lower.l_hess);
    let levels = maps
        .into_iter()
        .enumerate()
        .map(|(pos, m)| CompositionLevel::new(pos + 1, m as Arc<dyn LevelMap>))
        .collect();
    ProblemSpec::new(id, levels, lower, FeasibleSet::Free, constants, descriptor)
}

pub fn make_nested_composition(depth: usize, dims: NestedDims, seed: u64) -> Result<ProblemSpec, ProblemError> {
    let NestedDims { p, q, hidden } = dims;
    if !(depth == 2 || depth == 3) {
        return Err(ProblemError::InvalidParameter(format!("depth must be 2 or 3, got {depth}")));
    }
    if p == 0 || q == 0 || hidden == 0 {
        return Err(ProblemError::InvalidDimension(format!("p = {p}, q = {q}, hidden = {hidden}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lower_a = conditioned_spd(q, if q == 1 { 1.0 } else { 2.0 }, &mut rng)?;
    let mut gauss = |r: usize, c: usize, scale: f64| Matrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
    let lower_b = gauss(p, q, 1.0 / (q as f64).sqrt());
    let n = p + q;
    let mut maps: Vec<Arc<dyn SmoothMap>> = Vec::with_capacity(depth);
    let e = gauss(hidden, 1, 0.5).column(0).into_owned();
    maps.push(Arc::new(SmoothNormHead { e }));
    if depth == 2 {
        let w = gauss(hidden, n, 1.5 / (n as f64).sqrt());
        let c = gauss(hidden, 1, 0.3).column(0).into_owned();
        maps.push(Arc::new(TanhAffineMap { w, c }));
    } else {
        let w2 = gauss(hidden, hidden, 1.5 / (hidden as f64).sqrt());
        let c2 = gauss(hidden, 1, 0.3).column(0).into_owned();
        let w3 = gauss(hidden, n, 1.0 / (n as f64).sqrt());
        let c3 = gauss(hidden, 1, 0.3).column(0).into_owned();
        maps.push(Arc::new(TanhAffineMap { w: w2, c: c2 }));
        maps.push(Arc::new(AffineMap { w: w3, c: c3 }));
    }
    let descriptor = InstanceDescriptor::Nested {
        depth,
        p,
        q,
        hidden,
        seed,
    };
    from_maps(&descriptor.id(), maps, QuadraticLower::new(lower_a, lower_b)?, descriptor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::constants::{lipschitz_grad_psi, lipschitz_psi};
    use crate::problems::maps::{IdentityMap, LinearHead};
    use crate::Vector;

    #[test]
    fn rejects_unsupported_depth() {
        let dims = NestedDims { p: 2, q: 2, hidden: 3 };
        assert!(make_nested_composition(1, dims, 0).is_err());
        assert!(make_nested_composition(4, dims, 0).is_err());
    }

    #[test]
    fn constants_follow_level_formulas() {
        for depth in [2, 3] {
            let spec = make_nested_composition(depth, NestedDims { p: 2, q: 3, hidden: 4 }, 7).unwrap();
            let c = &spec.constants;
            assert_eq!(c.l_f.len(), depth);
            assert_eq!(c.l_psi, lipschitz_psi(&c.l_f));
            assert_eq!(c.l_grad_psi, lipschitz_grad_psi(&c.l_f, &c.l_grad_f));
            assert!(c.is_consistent());
        }
    }

    #[test]
    fn identity_inner_maps_collapse_to_single_level() {
        let lower = || {
            QuadraticLower::new(
                Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
                Matrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]),
            )
            .unwrap()
        };
        let head = LinearHead {
            c: Vector::from_vec(vec![1.0, -2.0, 0.5, 0.25]),
            c0: 0.1,
        };
        let custom = |n: &str| InstanceDescriptor::Custom { name: n.into() };
        let flat = from_maps("flat", vec![Arc::new(head.clone())], lower(), custom("flat")).unwrap();
        let deep = from_maps(
            "deep",
            vec![Arc::new(head), Arc::new(IdentityMap { dim: 4 }), Arc::new(IdentityMap { dim: 4 })],
            lower(),
            custom("deep"),
        )
        .unwrap();
        let x = Vector::from_vec(vec![0.7, -0.4]);
        assert!((flat.grad_phi(&x).unwrap() - deep.grad_phi(&x).unwrap()).norm() < 1e-14);
        assert_eq!(flat.phi(&x).unwrap(), deep.phi(&x).unwrap());
    }
}
