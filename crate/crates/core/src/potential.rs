//! External potentials `V(x)` with force `f = −V′` and force gradient `f′`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Potential {
    Free,
    /// `V = ½ m ω² x²`.
    Harmonic { omega: f64 },
    /// `V = ½ k x²` with any sign of `k`; negative `k` is an inverted well.
    Quadratic { stiffness: f64 },
    /// `V = k₄ x⁴`.
    Quartic { k4: f64 },
    /// Piecewise-linear `V` on a uniform table; force and gradient from
    /// central differences. Undefined (NaN) outside the table.
    Tabulated {
        x_min: f64,
        x_max: f64,
        values: Vec<f64>,
    },
}

impl Potential {
    pub fn validate(&self) -> Result<()> {
        match self {
            Potential::Harmonic { omega } if !(*omega > 0.0) => {
                Err(Error::invalid("potential.omega", "must be positive"))
            }
            Potential::Tabulated { x_min, x_max, values } => {
                if values.len() < 3 || !(x_max > x_min) {
                    Err(Error::invalid(
                        "potential.values",
                        "need at least 3 values on x_min < x_max",
                    ))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Frequency of small oscillations, where one exists.
    pub fn characteristic_frequency(&self, mass: f64) -> Option<f64> {
        match *self {
            Potential::Harmonic { omega } => Some(omega),
            Potential::Quadratic { stiffness } if stiffness > 0.0 => Some((stiffness / mass).sqrt()),
            _ => None,
        }
    }

    pub fn energy(&self, x: f64, mass: f64) -> f64 {
        match self {
            Potential::Free => 0.0,
            Potential::Harmonic { omega } => 0.5 * mass * omega * omega * x * x,
            Potential::Quadratic { stiffness } => 0.5 * stiffness * x * x,
            Potential::Quartic { k4 } => k4 * x.powi(4),
            Potential::Tabulated { .. } => self.table_lookup(x, |v, i, _| v[i]).unwrap_or(f64::NAN),
        }
    }

    pub fn force(&self, x: f64, mass: f64) -> f64 {
        match self {
            Potential::Free => 0.0,
            Potential::Harmonic { omega } => -mass * omega * omega * x,
            Potential::Quadratic { stiffness } => -stiffness * x,
            Potential::Quartic { k4 } => -4.0 * k4 * x.powi(3),
            Potential::Tabulated { .. } => self
                .table_lookup(x, |v, i, h| -table_slope(v, i, h))
                .unwrap_or(f64::NAN),
        }
    }

    /// `f′(x) = −V″(x)`.
    pub fn force_gradient(&self, x: f64, mass: f64) -> f64 {
        match self {
            Potential::Free => 0.0,
            Potential::Harmonic { omega } => -mass * omega * omega,
            Potential::Quadratic { stiffness } => -stiffness,
            Potential::Quartic { k4 } => -12.0 * k4 * x * x,
            Potential::Tabulated { .. } => self
                .table_lookup(x, |v, i, h| {
                    let j = i.clamp(1, v.len() - 2);
                    -(v[j + 1] - 2.0 * v[j] + v[j - 1]) / (h * h)
                })
                .unwrap_or(f64::NAN),
        }
    }

    /// Linear interpolation of a per-node quantity `g(values, node, h)`.
    fn table_lookup(&self, x: f64, g: impl Fn(&[f64], usize, f64) -> f64) -> Option<f64> {
        let Potential::Tabulated { x_min, x_max, values } = self else {
            return None;
        };
        if !(x >= *x_min && x <= *x_max) {
            return None;
        }
        let n = values.len();
        let h = (x_max - x_min) / (n - 1) as f64;
        let s = (x - x_min) / h;
        let i = (s.floor() as usize).min(n - 2);
        let frac = s - i as f64;
        Some((1.0 - frac) * g(values, i, h) + frac * g(values, i + 1, h))
    }
}

fn table_slope(v: &[f64], i: usize, h: f64) -> f64 {
    let n = v.len();
    if i == 0 {
        (v[1] - v[0]) / h
    } else if i == n - 1 {
        (v[n - 1] - v[n - 2]) / h
    } else {
        (v[i + 1] - v[i - 1]) / (2.0 * h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_forces_are_negative_gradients() {
        let pots = [
            Potential::Free,
            Potential::Harmonic { omega: 1.3 },
            Potential::Quadratic { stiffness: -0.7 },
            Potential::Quartic { k4: 0.25 },
        ];
        let m = 1.5;
        let h = 1e-5;
        for p in &pots {
            for &x in &[-1.2, -0.1, 0.4, 2.0] {
                let fd = -(p.energy(x + h, m) - p.energy(x - h, m)) / (2.0 * h);
                assert!((p.force(x, m) - fd).abs() < 1e-6, "{p:?} at {x}");
                let fdg = (p.force(x + h, m) - p.force(x - h, m)) / (2.0 * h);
                assert!((p.force_gradient(x, m) - fdg).abs() < 1e-5, "{p:?} at {x}");
            }
        }
    }

    #[test]
    fn tabulated_matches_sampled_quartic() {
        let n = 4001;
        let (lo, hi) = (-2.0, 2.0);
        let h = (hi - lo) / (n - 1) as f64;
        let values: Vec<f64> = (0..n).map(|i| (lo + i as f64 * h).powi(4)).collect();
        let tab = Potential::Tabulated { x_min: lo, x_max: hi, values };
        let exact = Potential::Quartic { k4: 1.0 };
        for &x in &[-1.5, -0.33, 0.0, 0.77, 1.9] {
            assert!((tab.energy(x, 1.0) - exact.energy(x, 1.0)).abs() < 1e-5);
            assert!((tab.force(x, 1.0) - exact.force(x, 1.0)).abs() < 1e-4);
            assert!((tab.force_gradient(x, 1.0) - exact.force_gradient(x, 1.0)).abs() < 1e-3);
        }
        assert!(tab.force(2.5, 1.0).is_nan());
    }
}
