//! Lipschitz and strong-convexity constants.

use serde::{Deserialize, Serialize};

/// `L_Ψ = ∏ L_{f_i}`.
pub fn lipschitz_psi(l_f: &[f64]) -> f64 {
    l_f.iter().product()
}

/// `L_{∇Ψ} = Σ_j L_{∇f_j} ∏_{l<j} L_{f_l} ∏_{l>j} L_{f_l}²`.
pub fn lipschitz_grad_psi(l_f: &[f64], l_grad_f: &[f64]) -> f64 {
    let t = l_f.len();
    (0..t)
        .map(|j| {
            let before: f64 = l_f[..j].iter().product();
            let after: f64 = l_f[j + 1..].iter().map(|l| l * l).product();
            l_grad_f[j] * before * after
        })
        .sum()
}

/// `L_{y*} = L_{∇g} / μ_g`.
pub fn lipschitz_y_star(l_grad_g: f64, mu_g: f64) -> f64 {
    l_grad_g / mu_g
}

/// Lipschitz constant of `∇Φ`, with `L_{∇Ψ}` used for both partial
/// gradients.
pub fn lipschitz_grad_phi(l_psi: f64, l_grad_psi: f64, mu_g: f64, l_grad_g: f64, l_hess_g: f64) -> f64 {
    let lx = l_grad_psi;
    let ly = l_grad_psi;
    lx + ((lx + ly) * l_grad_g + l_psi * l_psi * l_hess_g) / mu_g
        + (2.0 * l_psi * l_grad_g * l_hess_g + ly * l_grad_g * l_grad_g) / (mu_g * mu_g)
        + l_psi * l_hess_g * l_grad_g * l_grad_g / (mu_g * mu_g * mu_g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    pub l_f: Vec<f64>,
    pub l_grad_f: Vec<f64>,
    pub mu_g: f64,
    pub l_grad_g: f64,
    pub l_hess_g: f64,
    pub l_psi: f64,
    pub l_grad_psi: f64,
    pub l_y_star: f64,
    pub l_grad_phi: f64,
    /// True when the per-level constants are estimates rather than bounds.
    pub measured: bool,
}

impl SmoothnessConstants {
    pub fn from_levels(l_f: Vec<f64>, l_grad_f: Vec<f64>, mu_g: f64, l_grad_g: f64, l_hess_g: f64) -> Self {
        let l_psi = lipschitz_psi(&l_f);
        let l_grad_psi = lipschitz_grad_psi(&l_f, &l_grad_f);
        Self {
            l_y_star: lipschitz_y_star(l_grad_g, mu_g),
            l_grad_phi: lipschitz_grad_phi(l_psi, l_grad_psi, mu_g, l_grad_g, l_hess_g),
            l_f,
            l_grad_f,
            mu_g,
            l_grad_g,
            l_hess_g,
            l_psi,
            l_grad_psi,
            measured: false,
        }
    }

    /// Recomputes every derived constant and compares for exact equality.
    pub fn is_consistent(&self) -> bool {
        let again = Self::from_levels(self.l_f.clone(), self.l_grad_f.clone(), self.mu_g, self.l_grad_g, self.l_hess_g);
        let same = |a: f64, b: f64| a == b || (a.is_nan() && b.is_nan());
        same(again.l_psi, self.l_psi)
            && same(again.l_grad_psi, self.l_grad_psi)
            && same(again.l_y_star, self.l_y_star)
            && same(again.l_grad_phi, self.l_grad_phi)
    }
}
