use serde::{Deserialize, Serialize};

use crate::Vector;

/// Closed convex constraint set for `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeasibleSet {
    #[default]
    Free,
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl FeasibleSet {
    pub fn unit_box(p: usize) -> Self {
        FeasibleSet::Box {
            lower: vec![0.0; p],
            upper: vec![1.0; p],
        }
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        FeasibleSet::Ball { center, radius }
    }

    /// Checks the set is non-empty and matches dimension `p`.
    pub fn validate(&self, p: usize) -> Result<(), String> {
        match self {
            FeasibleSet::Free => Ok(()),
            FeasibleSet::Box { lower, upper } => {
                if lower.len() != p || upper.len() != p {
                    return Err(format!("box bounds have lengths {}/{}, expected {p}", lower.len(), upper.len()));
                }
                for (i, (l, u)) in lower.iter().zip(upper).enumerate() {
                    if l.is_nan() || u.is_nan() || l > u {
                        return Err(format!("box coordinate {i} has empty interval [{l}, {u}]"));
                    }
                }
                Ok(())
            }
            FeasibleSet::Ball { center, radius } => {
                if center.len() != p {
                    return Err(format!("ball center has length {}, expected {p}", center.len()));
                }
                if !(radius.is_finite() && *radius >= 0.0) {
                    return Err(format!("ball radius {radius} must be finite and non-negative"));
                }
                Ok(())
            }
        }
    }

    /// Euclidean projection `Π_X(v)`.
    pub fn project(&self, v: &Vector) -> Vector {
        match self {
            FeasibleSet::Free => v.clone(),
            FeasibleSet::Box { lower, upper } => {
                Vector::from_fn(v.len(), |i, _| v[i].clamp(lower[i], upper[i]))
            }
            FeasibleSet::Ball { center, radius } => {
                let c = Vector::from_column_slice(center);
                let diff = v - &c;
                let norm = diff.norm();
                if norm <= *radius {
                    v.clone()
                } else {
                    c + diff * (*radius / norm)
                }
            }
        }
    }

    pub fn contains(&self, v: &Vector, tol: f64) -> bool {
        match self {
            FeasibleSet::Free => true,
            FeasibleSet::Box { lower, upper } => {
                v.iter().enumerate().all(|(i, &e)| e >= lower[i] - tol && e <= upper[i] + tol)
            }
            FeasibleSet::Ball { center, radius } => {
                (v - Vector::from_column_slice(center)).norm() <= radius + tol
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(e: &[f64]) -> Vector {
        Vector::from_row_slice(e)
    }

    #[test]
    fn ball_projection_is_radial() {
        let set = FeasibleSet::ball(vec![0.0, 0.0], 1.0);
        let z = set.project(&v(&[3.0, 4.0]));
        assert!((z - v(&[0.6, 0.8])).norm() < 1e-15);
    }

    #[test]
    fn box_clamps() {
        let z = FeasibleSet::unit_box(2).project(&v(&[-1.0, 0.5]));
        assert_eq!(z, v(&[0.0, 0.5]));
    }

    #[test]
    fn validation() {
        assert!(FeasibleSet::unit_box(2).validate(3).is_err());
        let bad = FeasibleSet::Box {
            lower: vec![1.0],
            upper: vec![0.0],
        };
        assert!(bad.validate(1).is_err());
        assert!(FeasibleSet::ball(vec![0.0], -1.0).validate(1).is_err());
        assert!(FeasibleSet::Free.validate(7).is_ok());
    }

    fn sets() -> impl Strategy<Value = FeasibleSet> {
        prop_oneof![
            Just(FeasibleSet::Free),
            (prop::collection::vec(-2.0..0.0f64, 3), prop::collection::vec(0.0..2.0f64, 3))
                .prop_map(|(lower, upper)| FeasibleSet::Box { lower, upper }),
            (prop::collection::vec(-1.0..1.0f64, 3), 0.0..3.0f64).prop_map(|(c, r)| FeasibleSet::ball(c, r)),
        ]
    }

    fn points() -> impl Strategy<Value = Vector> {
        prop::collection::vec(-10.0..10.0f64, 3).prop_map(Vector::from_vec)
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(set in sets(), a in points()) {
            let once = set.project(&a);
            let twice = set.project(&once);
            prop_assert!((once - twice).norm() <= 1e-12);
        }

        #[test]
        fn projection_is_non_expansive(set in sets(), a in points(), b in points()) {
            let pa = set.project(&a);
            let pb = set.project(&b);
            prop_assert!((pa - pb).norm() <= (a - b).norm() + 1e-12);
        }

        #[test]
        fn projection_lands_in_set(set in sets(), a in points()) {
            prop_assert!(set.contains(&set.project(&a), 1e-12));
        }
    }
}
