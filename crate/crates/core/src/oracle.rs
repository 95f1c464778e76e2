//! Reference processes with known statistics: the Ornstein–Uhlenbeck
//! process `dx = −κx dt + √(2D) dW` sampled exactly, and the Wiener process
//! (`κ = 0`).

use serde::{Deserialize, Serialize};

use crate::dynamics::{TimeGrid, Trajectory, TrajectoryEnsemble, TrajectoryStatus};
use crate::error::{Error, Result};
use crate::potential::Potential;
use crate::rng::{self, NormalSource};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuSpec {
    /// Relaxation rate; zero gives a Wiener process.
    pub kappa: f64,
    pub diffusion: f64,
    /// Fixed start; `None` draws from the stationary law (requires `κ > 0`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
}

impl OuSpec {
    pub fn wiener(diffusion: f64) -> Self {
        Self {
            kappa: 0.0,
            diffusion,
            x0: Some(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0) {
            return Err(Error::invalid("ou.kappa", "must be non-negative"));
        }
        if !(self.diffusion > 0.0) {
            return Err(Error::invalid("ou.diffusion", "must be positive"));
        }
        if self.x0.is_none() && self.kappa == 0.0 {
            return Err(Error::invalid("ou.x0", "a Wiener process has no stationary law"));
        }
        Ok(())
    }

    /// `σ² = D/κ`.
    pub fn stationary_variance(&self) -> f64 {
        self.diffusion / self.kappa
    }

    /// Osmotic velocity `u = D ρ′/ρ = −κx` of the stationary law.
    pub fn osmotic_velocity(&self, x: f64) -> f64 {
        -self.kappa * x
    }

    /// Expected value of the finite-lag second-difference estimator,
    /// `x (e^{−κΔt} − 1) / Δt`, which tends to `−κx` as `Δt → 0`.
    pub fn osmotic_estimator_mean(&self, x: f64, delta_t: f64) -> f64 {
        x * (-self.kappa * delta_t).exp_m1() / delta_t
    }

    /// Conditional displacement variance over `Δt` divided by `2Δt`:
    /// `D (1 − e^{−2κΔt}) / (2κΔt)`.
    pub fn diffusion_estimator_mean(&self, delta_t: f64) -> f64 {
        if self.kappa == 0.0 {
            return self.diffusion;
        }
        let k = 2.0 * self.kappa * delta_t;
        -self.diffusion * (-k).exp_m1() / k
    }

    /// Force for which the stationary OU fields satisfy the stationary
    /// Brownian-branch equation `m(λ u u′) = −f` with `λ = −1`, i.e.
    /// `f = +mκ²x`.
    pub fn brownian_branch_potential(&self, mass: f64) -> Potential {
        Potential::Quadratic {
            stiffness: -mass * self.kappa * self.kappa,
        }
    }
}

/// Samples `n_traj` paths on `grid` with the exact transition law.
/// Trajectory `i` uses the seed `derive_seed(master_seed, i)`.
pub fn ou_ensemble(
    spec: &OuSpec,
    grid: TimeGrid,
    n_traj: usize,
    master_seed: u64,
    record_stride: usize,
) -> Result<TrajectoryEnsemble> {
    spec.validate()?;
    grid.validate()?;
    if n_traj == 0 {
        return Err(Error::invalid("n_traj", "must be at least 1"));
    }
    if record_stride == 0 || record_stride > grid.n_steps {
        return Err(Error::invalid("record_stride", "must be in 1..=n_steps"));
    }
    let (decay, step_sigma) = if spec.kappa == 0.0 {
        (1.0, (2.0 * spec.diffusion * grid.dt).sqrt())
    } else {
        let a = (-spec.kappa * grid.dt).exp();
        let var = -spec.stationary_variance() * (-2.0 * spec.kappa * grid.dt).exp_m1();
        (a, var.sqrt())
    };
    let n_records = grid.n_steps / record_stride + 1;
    let trajectories = (0..n_traj)
        .map(|i| {
            let seed = rng::derive_seed(master_seed, i as u64);
            let mut normals = NormalSource::new(rng::stream_rng(seed, rng::STREAM_ORACLE_NOISE));
            let mut x = match spec.x0 {
                Some(x0) => x0,
                None => spec.stationary_variance().sqrt() * normals.sample(),
            };
            let mut xs = Vec::with_capacity(n_records);
            for step in 0..=grid.n_steps {
                if step % record_stride == 0 {
                    xs.push(x);
                }
                x = decay * x + step_sigma * normals.sample();
            }
            Trajectory {
                id: i,
                seed,
                status: TrajectoryStatus::Ok,
                x: xs,
                v: Vec::new(),
                drive: Vec::new(),
            }
        })
        .collect();
    Ok(TrajectoryEnsemble {
        grid,
        record_stride,
        trajectories,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    #[test]
    fn stationary_variance_is_preserved() {
        let spec = OuSpec {
            kappa: 2.0,
            diffusion: 0.5,
            x0: None,
        };
        let ens = ou_ensemble(&spec, TimeGrid::new(0.0, 0.05, 200), 4000, 9, 200).unwrap();
        let last: Vec<f64> = ens.trajectories.iter().map(|t| t.x[1] * t.x[1]).collect();
        let (m, se) = stats::mean_and_se(&last);
        assert!((m - 0.25).abs() < 4.0 * se, "{m} ± {se}");
    }

    #[test]
    fn wiener_increments_have_variance_2dt() {
        let spec = OuSpec::wiener(0.3);
        let ens = ou_ensemble(&spec, TimeGrid::new(0.0, 0.1, 10), 5000, 1, 10).unwrap();
        let sq: Vec<f64> = ens.trajectories.iter().map(|t| t.x[1].powi(2)).collect();
        let (m, se) = stats::mean_and_se(&sq);
        assert!((m - 2.0 * 0.3 * 1.0).abs() < 4.0 * se);
    }

    #[test]
    fn estimator_means_reduce_to_continuum() {
        let spec = OuSpec {
            kappa: 0.7,
            diffusion: 1.3,
            x0: None,
        };
        assert!((spec.osmotic_estimator_mean(2.0, 1e-7) - spec.osmotic_velocity(2.0)).abs() < 1e-6);
        assert!((spec.diffusion_estimator_mean(1e-7) - 1.3).abs() < 1e-6);
    }

    #[test]
    fn wiener_has_no_stationary_law() {
        let spec = OuSpec {
            kappa: 0.0,
            diffusion: 1.0,
            x0: None,
        };
        assert!(spec.validate().is_err());
    }
}
