//! The elementary updates of one outer iteration.

use rand::RngCore;

use super::FeasibleSet;
use crate::nhe::Chain;
use crate::oracle::{Oracle, OracleError};
use crate::{Matrix, Vector};

/// `argmin_{z ∈ X} ⟨d, z − x⟩ + (β/2)‖z − x‖² = Π_X(x − d/β)`.
pub fn prox_step(x: &Vector, d: &Vector, beta: f64, set: &FeasibleSet) -> Vector {
    set.project(&(x - d / beta))
}

/// `N` stochastic gradient steps on `g(x, ·)` from `y0`; returns
/// `y^{(0)}, …, y^{(N)}`.
pub fn inner_loop(
    oracle: &mut Oracle<'_>,
    x: &Vector,
    y0: &Vector,
    gamma: f64,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<Vector>, OracleError> {
    let mut ys = Vec::with_capacity(n + 1);
    ys.push(y0.clone());
    let mut y = y0.clone();
    for _ in 0..n {
        let v = oracle.lower_gradient(x, &y, rng)?;
        y.axpy(-gamma, &v, 1.0);
        ys.push(y.clone());
    }
    Ok(ys)
}

/// `(1 − τ) d + τ w`.
pub fn update_direction(d: &Vector, w: &Vector, tau: f64) -> Vector {
    d * (1.0 - tau) + w * tau
}

/// Linearized tracking update, applied from level `T` down to level 1:
///
/// `u⁺⁽ⁱ⁾ = (1 − τ) u⁽ⁱ⁾ + τ F⁽ⁱ⁾ + J⁽ⁱ⁾ᵀ (u⁺⁽ⁱ⁺¹⁾ − u⁽ⁱ⁺¹⁾)`.
///
/// `values[i-1]` and `jacobians[i-1]` are the level-`i` samples (Jacobians
/// transposed, `d_i × d_{i-1}`); `top_delta` is the displacement of
/// `u⁽ᵀ⁺¹⁾ = (x, y)`.
pub fn update_chain(
    u: &Chain,
    values: &[Vector],
    jacobians: &[Matrix],
    top_delta: &Vector,
    tau: f64,
) -> Result<Chain, OracleError> {
    let t = u.depth();
    if values.len() != t || jacobians.len() != t {
        return Err(OracleError::ChainLength {
            expected: t,
            found: values.len().min(jacobians.len()),
        });
    }
    let mut next = u.values().to_vec();
    let mut delta = top_delta.clone();
    for i in (1..=t).rev() {
        let j = &jacobians[i - 1];
        let old = u.get(i);
        if j.nrows() != delta.len() || j.ncols() != old.len() || values[i - 1].len() != old.len() {
            return Err(OracleError::LevelDimension {
                level: i,
                expected: j.nrows(),
                found: delta.len(),
            });
        }
        let transported = j.tr_mul(&delta);
        let new = old * (1.0 - tau) + &values[i - 1] * tau + transported;
        delta = &new - old;
        next[i - 1] = new;
    }
    Ok(Chain::new(next))
}

/// Samples `F⁽ⁱ⁾` and `J⁽ⁱ⁾` at the current chain and applies [`update_chain`].
#[allow(clippy::too_many_arguments)]
pub fn track_chain(
    oracle: &mut Oracle<'_>,
    u: &Chain,
    xy_old: &Vector,
    xy_new: &Vector,
    tau: f64,
    value_rng: &mut dyn RngCore,
    jacobian_rng: &mut dyn RngCore,
) -> Result<Chain, OracleError> {
    let points = u.eval_points(xy_old);
    let t = u.depth();
    let mut values = vec![Vector::zeros(0); t];
    let mut jacobians = vec![Matrix::zeros(0, 0); t];
    for i in (1..=t).rev() {
        values[i - 1] = oracle.value(i, &points[i - 1], value_rng)?;
        jacobians[i - 1] = oracle.jacobian(i, &points[i - 1], jacobian_rng)?;
    }
    update_chain(u, &values, &jacobians, &(xy_new - xy_old), tau)
}

/// `u⁽ᵀ⁾ = F_T(x, y)`, then `u⁽ⁱ⁾ = F_i(u⁽ⁱ⁺¹⁾)` down to level 1.
pub fn initial_chain(oracle: &mut Oracle<'_>, xy: &Vector, rng: &mut dyn RngCore) -> Result<Chain, OracleError> {
    let t = oracle.depth();
    let mut vals = vec![Vector::zeros(0); t];
    let mut z = xy.clone();
    for i in (1..=t).rev() {
        z = oracle.value(i, &z, rng)?;
        vals[i - 1] = z.clone();
    }
    Ok(Chain::new(vals))
}
