//! Finite-difference reference solver for
//!
//! ```text
//! 2imD ∂ψ/∂t = −2mD² ∂²ψ/∂x² + V ψ,    D = ħ/2m
//! ```
//!
//! plus the hydrodynamic fields built from `ψ`: flow and osmotic velocities,
//! the quantum potential in its two equivalent forms, and residuals of the
//! Navier–Stokes-form and continuity equations.
//!
//! All derivatives are second-order central differences. Every diagnostic
//! that reports a "truncation bound" also evaluates itself with the stencil
//! spread to `2h`; since the error shrinks like `h²`, the `2h` value bounds
//! the `h` value.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::Potential;
use crate::tridiag;

pub const SCHEMA_VERSION: u32 = 1;

/// Fields involving `1/ψ` are reported only where `ρ ≥ RHO_FLOOR · max ρ`.
pub const RHO_FLOOR: f64 = 1e-8;

/// Bound states must satisfy `|ψ_edge| < BOUNDARY_LIMIT · max |ψ|`.
pub const BOUNDARY_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// `ψ = 0` at `x_min` and `x_max`.
    #[default]
    HardWall,
    /// `x_max` is identified with `x_min`.
    Periodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
    #[serde(default)]
    pub boundary: Boundary,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Self {
        Self {
            x_min,
            x_max,
            n_points,
            boundary: Boundary::HardWall,
        }
    }

    pub fn periodic(x_min: f64, x_max: f64, n_points: usize) -> Self {
        Self {
            boundary: Boundary::Periodic,
            ..Self::new(x_min, x_max, n_points)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points < 16 {
            return Err(Error::invalid("grid.n_points", "must be at least 16"));
        }
        if !(self.x_max > self.x_min) {
            return Err(Error::invalid("grid", "x_min must be below x_max"));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        let l = self.x_max - self.x_min;
        match self.boundary {
            Boundary::HardWall => l / (self.n_points - 1) as f64,
            Boundary::Periodic => l / self.n_points as f64,
        }
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.spacing()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.x(i)).collect()
    }

    /// Index `i + k`, wrapped on a ring; `None` past a hard wall.
    fn offset(&self, i: usize, k: isize) -> Option<usize> {
        let n = self.n_points as isize;
        let j = i as isize + k;
        match self.boundary {
            Boundary::Periodic => Some(j.rem_euclid(n) as usize),
            Boundary::HardWall => (0..n).contains(&j).then_some(j as usize),
        }
    }
}

/// `ħ` and `m`; the diffusion constant is `D = ħ/2m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantumUnits {
    pub hbar: f64,
    pub mass: f64,
}

impl Default for QuantumUnits {
    fn default() -> Self {
        Self { hbar: 1.0, mass: 1.0 }
    }
}

impl QuantumUnits {
    pub fn diffusion(&self) -> f64 {
        self.hbar / (2.0 * self.mass)
    }

    /// `ħ²/2m = 2mD²`.
    fn kinetic(&self) -> f64 {
        self.hbar * self.hbar / (2.0 * self.mass)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunctionState {
    pub grid: GridSpec,
    pub units: QuantumUnits,
    pub potential: Potential,
    pub psi: Vec<Complex64>,
    pub time: f64,
}

impl WaveFunctionState {
    /// Normalizes `psi` to unit norm.
    pub fn new(grid: GridSpec, units: QuantumUnits, potential: Potential, psi: Vec<Complex64>) -> Result<Self> {
        grid.validate()?;
        if psi.len() != grid.n_points {
            return Err(Error::invalid("psi", "length differs from the grid"));
        }
        let mut s = Self {
            grid,
            units,
            potential,
            psi,
            time: 0.0,
        };
        let norm = s.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::invalid("psi", "cannot normalize a zero or non-finite state"));
        }
        let scale = norm.sqrt().recip();
        s.psi.iter_mut().for_each(|z| *z *= scale);
        Ok(s)
    }

    /// Builds a state from a closed-form `ψ(x)`.
    pub fn from_fn(
        grid: GridSpec,
        units: QuantumUnits,
        potential: Potential,
        psi: impl Fn(f64) -> Complex64,
    ) -> Result<Self> {
        let mut values: Vec<Complex64> = grid.points().into_iter().map(psi).collect();
        if grid.boundary == Boundary::HardWall {
            values[0] = Complex64::new(0.0, 0.0);
            let n = values.len();
            values[n - 1] = Complex64::new(0.0, 0.0);
        }
        Self::new(grid, units, potential, values)
    }

    pub fn diffusion(&self) -> f64 {
        self.units.diffusion()
    }

    /// `∫ρ dx` by the rectangle rule.
    pub fn norm(&self) -> f64 {
        self.psi.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.spacing()
    }

    pub fn rho(&self) -> Vec<f64> {
        self.psi.iter().map(|z| z.norm_sqr()).collect()
    }

    /// `∫ x ρ dx`.
    pub fn mean_position(&self) -> f64 {
        let h = self.grid.spacing();
        self.psi
            .iter()
            .enumerate()
            .map(|(i, z)| self.grid.x(i) * z.norm_sqr())
            .sum::<f64>()
            * h
    }

    pub fn position_variance(&self) -> f64 {
        let h = self.grid.spacing();
        let m = self.mean_position();
        self.psi
            .iter()
            .enumerate()
            .map(|(i, z)| (self.grid.x(i) - m).powi(2) * z.norm_sqr())
            .sum::<f64>()
            * h
    }

    /// `⟨self|other⟩`.
    pub fn overlap(&self, other: &WaveFunctionState) -> Complex64 {
        self.psi
            .iter()
            .zip(&other.psi)
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            * self.grid.spacing()
    }

    /// Discrete `Hψ`.
    pub fn apply_hamiltonian(&self) -> Vec<Complex64> {
        let a = self.units.kinetic() / self.grid.spacing().powi(2);
        let n = self.grid.n_points;
        let zero = Complex64::new(0.0, 0.0);
        (0..n)
            .map(|i| {
                if self.grid.boundary == Boundary::HardWall && (i == 0 || i == n - 1) {
                    return zero;
                }
                let left = self.grid.offset(i, -1).map_or(zero, |j| self.psi[j]);
                let right = self.grid.offset(i, 1).map_or(zero, |j| self.psi[j]);
                let v = self.potential.energy(self.grid.x(i), self.units.mass);
                self.psi[i] * (2.0 * a + v) - (left + right) * a
            })
            .collect()
    }

    pub fn energy(&self) -> f64 {
        let h_psi = self.apply_hamiltonian();
        self.psi
            .iter()
            .zip(&h_psi)
            .map(|(a, b)| (a.conj() * b).re)
            .sum::<f64>()
            * self.grid.spacing()
    }

    /// CSV `x,rho,v,u,va,V_Q` (NaN where masked).
    pub fn write_fields_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let vel = velocity_fields(self);
        let q = quantum_potential(self);
        writeln!(out, "x,rho,v,u,va,V_Q")?;
        for i in 0..self.grid.n_points {
            writeln!(
                out,
                "{:e},{:e},{:e},{:e},{:e},{:e}",
                self.grid.x(i),
                self.psi[i].norm_sqr(),
                vel.v[i],
                vel.u[i],
                vel.v[i] - vel.u[i],
                q.density_form[i]
            )?;
        }
        Ok(())
    }

    pub fn metadata(&self) -> FieldMetadata {
        FieldMetadata {
            schema_version: SCHEMA_VERSION,
            time: self.time,
            hbar: self.units.hbar,
            mass: self.units.mass,
            diffusion: self.diffusion(),
            grid: self.grid.clone(),
            rho_floor: RHO_FLOOR,
            norm: self.norm(),
        }
    }
}

/// JSON sidecar of a field dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMetadata {
    pub schema_version: u32,
    pub time: f64,
    pub hbar: f64,
    pub mass: f64,
    pub diffusion: f64,
    pub grid: GridSpec,
    pub rho_floor: f64,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eigensystem {
    pub grid: GridSpec,
    pub units: QuantumUnits,
    pub potential: Potential,
    pub energies: Vec<f64>,
    /// Real eigenfunctions on the full grid, `Σ ψ² h = 1`.
    pub states: Vec<Vec<f64>>,
    /// `max |G − I|` of the Gram matrix.
    pub gram_error: f64,
}

impl Eigensystem {
    pub fn state(&self, n: usize) -> WaveFunctionState {
        WaveFunctionState {
            grid: self.grid.clone(),
            units: self.units,
            potential: self.potential.clone(),
            psi: self.states[n].iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            time: 0.0,
        }
    }

    /// Long-format CSV `n,E_n,x,psi`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "n,E_n,x,psi")?;
        for (n, (e, psi)) in self.energies.iter().zip(&self.states).enumerate() {
            for (i, v) in psi.iter().enumerate() {
                writeln!(out, "{n},{e:e},{:e},{v:e}", self.grid.x(i))?;
            }
        }
        Ok(())
    }
}

/// Lowest `n_states` eigenpairs of the discrete Hamiltonian.
pub fn solve_stationary(
    potential: &Potential,
    grid: &GridSpec,
    units: QuantumUnits,
    n_states: usize,
) -> Result<Eigensystem> {
    grid.validate()?;
    potential.validate()?;
    let n = grid.n_points;
    let h = grid.spacing();
    let a = units.kinetic() / (h * h);
    let unknowns = match grid.boundary {
        Boundary::HardWall => n - 2,
        Boundary::Periodic => n,
    };
    if n_states == 0 || n_states > unknowns / 4 {
        return Err(Error::invalid(
            "n_states",
            format!("must be in 1..={} for this grid", unknowns / 4),
        ));
    }
    let v: Vec<f64> = (0..n).map(|i| potential.energy(grid.x(i), units.mass)).collect();
    if v.iter().any(|e| !e.is_finite()) {
        return Err(Error::invalid("potential", "not finite on the whole grid"));
    }

    let mut pairs: Vec<(f64, Vec<f64>)> = match grid.boundary {
        Boundary::HardWall => {
            let diag: Vec<f64> = v[1..n - 1].iter().map(|vi| 2.0 * a + vi).collect();
            let off = vec![-a; n - 3];
            tridiag::lowest_eigenpairs(&diag, &off, n_states)
                .into_iter()
                .map(|(e, inner)| {
                    let mut full = Vec::with_capacity(n);
                    full.push(0.0);
                    full.extend(inner);
                    full.push(0.0);
                    (e, full)
                })
                .collect()
        }
        Boundary::Periodic => {
            let mut hm = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                hm[(i, i)] = 2.0 * a + v[i];
                hm[(i, (i + 1) % n)] = -a;
                hm[((i + 1) % n, i)] = -a;
            }
            let eig = hm.symmetric_eigen();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
            order
                .into_iter()
                .take(n_states)
                .map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).iter().copied().collect()))
                .collect()
        }
    };

    for (_, psi) in &mut pairs {
        let norm = (psi.iter().map(|x| x * x).sum::<f64>() * h).sqrt();
        let peak = psi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let first = psi.iter().find(|x| x.abs() > 1e-3 * peak).copied().unwrap_or(1.0);
        let sign = if first < 0.0 { -1.0 } else { 1.0 };
        psi.iter_mut().for_each(|x| *x *= sign / norm);
    }

    if grid.boundary == Boundary::HardWall && !matches!(potential, Potential::Free) {
        for (_, psi) in &pairs {
            let peak = psi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let edge = psi[1].abs().max(psi[n - 2].abs());
            let ratio = edge / peak;
            if ratio >= BOUNDARY_LIMIT {
                return Err(Error::GridTooNarrow {
                    ratio,
                    limit: BOUNDARY_LIMIT,
                });
            }
        }
    }

    let mut gram_error = 0.0f64;
    for (i, (_, a)) in pairs.iter().enumerate() {
        for (j, (_, b)) in pairs.iter().enumerate() {
            let g: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * h;
            let target = if i == j { 1.0 } else { 0.0 };
            gram_error = gram_error.max((g - target).abs());
        }
    }

    let (energies, states) = pairs.into_iter().unzip();
    Ok(Eigensystem {
        grid: grid.clone(),
        units,
        potential: potential.clone(),
        energies,
        states,
        gram_error,
    })
}

/// Crank–Nicolson step limit: `dt · ‖Hψ‖ / ħ` may not exceed this.
pub const MAX_PHASE_PER_STEP: f64 = 1.0;

/// Advances `state` by `steps` Crank–Nicolson steps of size `dt`.
///
/// The scheme is unitary for any `dt`; the guard only rejects steps so
/// large that the state's own energy scale is not resolved.
pub fn evolve(state: &WaveFunctionState, dt: f64, steps: usize) -> Result<WaveFunctionState> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    let norm = state.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::invalid("state", format!("norm {norm} is not 1")));
    }
    let h = state.grid.spacing();
    let h_psi = state.apply_hamiltonian();
    let h_norm = (h_psi.iter().map(|z| z.norm_sqr()).sum::<f64>() * h).sqrt();
    let phase = dt * h_norm / state.units.hbar;
    if phase > MAX_PHASE_PER_STEP {
        return Err(Error::StepSize(format!(
            "dt·‖Hψ‖/ħ = {phase:.3} exceeds {MAX_PHASE_PER_STEP}"
        )));
    }

    let n = state.grid.n_points;
    let a = state.units.kinetic() / (h * h);
    let k = Complex64::new(0.0, 0.5 * dt / state.units.hbar);
    let v: Vec<f64> = (0..n)
        .map(|i| state.potential.energy(state.grid.x(i), state.units.mass))
        .collect();
    let (lo, hi) = match state.grid.boundary {
        Boundary::HardWall => (1, n - 1),
        Boundary::Periodic => (0, n),
    };
    let m = hi - lo;
    let diag: Vec<Complex64> = (lo..hi).map(|i| Complex64::new(1.0, 0.0) + k * (2.0 * a + v[i])).collect();
    let off = vec![-k * a; m];

    let mut out = state.clone();
    for _ in 0..steps {
        let h_psi = out.apply_hamiltonian();
        let rhs: Vec<Complex64> = (lo..hi).map(|i| out.psi[i] - k * h_psi[i]).collect();
        let next = match state.grid.boundary {
            Boundary::HardWall => tridiag::thomas(&off, &diag, &off, &rhs),
            Boundary::Periodic => tridiag::thomas_cyclic(&off, &diag, &off, &rhs),
        };
        out.psi[lo..hi].copy_from_slice(&next);
        out.time += dt;
    }
    Ok(out)
}

/// Points whose neighbours up to `reach` grid steps exist and carry density
/// above the floor.
fn support(state: &WaveFunctionState, reach: isize) -> Vec<bool> {
    let rho = state.rho();
    let floor = RHO_FLOOR * rho.iter().fold(0.0f64, |m, &r| m.max(r));
    (0..rho.len())
        .map(|i| {
            (-reach..=reach).all(|k| state.grid.offset(i, k).is_some_and(|j| rho[j] >= floor && rho[j] > 0.0))
        })
        .collect()
}

/// `ψ′/ψ` with a central difference of half-width `s` points.
fn log_derivative(state: &WaveFunctionState, i: usize, s: usize) -> Option<Complex64> {
    let g = &state.grid;
    let (l, r) = (g.offset(i, -(s as isize))?, g.offset(i, s as isize)?);
    Some((state.psi[r] - state.psi[l]) / (2.0 * s as f64 * g.spacing() * state.psi[i]))
}

fn central<F: Fn(usize) -> Option<f64>>(g: &GridSpec, i: usize, s: usize, f: F) -> Option<f64> {
    let (l, r) = (g.offset(i, -(s as isize))?, g.offset(i, s as isize)?);
    Some((f(r)? - f(l)?) / (2.0 * s as f64 * g.spacing()))
}

fn second<F: Fn(usize) -> Option<f64>>(g: &GridSpec, i: usize, s: usize, f: F) -> Option<f64> {
    let (l, r) = (g.offset(i, -(s as isize))?, g.offset(i, s as isize)?);
    let hs = s as f64 * g.spacing();
    Some((f(r)? - 2.0 * f(i)? + f(l)?) / (hs * hs))
}

/// `(v, u)` at stencil half-width `s`; `None` outside the support.
fn velocities_at(state: &WaveFunctionState, ok: &[bool], s: usize) -> Vec<Option<(f64, f64)>> {
    let two_d = 2.0 * state.diffusion();
    (0..state.grid.n_points)
        .map(|i| {
            if !ok[i] {
                return None;
            }
            let z = log_derivative(state, i, s)?;
            Some((two_d * z.im, two_d * z.re))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityFields {
    pub x: Vec<f64>,
    /// `v = 2D Im(ψ′/ψ)`; NaN where masked.
    pub v: Vec<f64>,
    /// `u = 2D Re(ψ′/ψ)`; NaN where masked.
    pub u: Vec<f64>,
    pub mask: Vec<bool>,
}

pub fn velocity_fields(state: &WaveFunctionState) -> VelocityFields {
    let ok = support(state, 1);
    let vel = velocities_at(state, &ok, 1);
    VelocityFields {
        x: state.grid.points(),
        v: vel.iter().map(|p| p.map_or(f64::NAN, |p| p.0)).collect(),
        u: vel.iter().map(|p| p.map_or(f64::NAN, |p| p.1)).collect(),
        mask: vel.iter().map(Option::is_some).collect(),
    }
}

/// `V_Q` from the osmotic velocity, `−½mu² − mD u′`.
fn vq_velocity_form(state: &WaveFunctionState, ok: &[bool], s: usize) -> Vec<Option<f64>> {
    let m = state.units.mass;
    let d = state.diffusion();
    let vel = velocities_at(state, ok, s);
    let u = |j: usize| vel[j].map(|p| p.1);
    (0..state.grid.n_points)
        .map(|i| {
            let ui = u(i)?;
            let du = central(&state.grid, i, s, u)?;
            Some(-0.5 * m * ui * ui - m * d * du)
        })
        .collect()
}

/// `V_Q` from the density, `−2mD² (√ρ)″/√ρ`.
fn vq_density_form(state: &WaveFunctionState, ok: &[bool], s: usize) -> Vec<Option<f64>> {
    let c = 2.0 * state.units.mass * state.diffusion().powi(2);
    let amp: Vec<f64> = state.psi.iter().map(|z| z.norm()).collect();
    (0..state.grid.n_points)
        .map(|i| {
            if !ok[i] {
                return None;
            }
            let lap = second(&state.grid, i, s, |j| Some(amp[j]))?;
            Some(-c * lap / amp[i])
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumPotential {
    pub x: Vec<f64>,
    pub velocity_form: Vec<f64>,
    pub density_form: Vec<f64>,
    pub mask: Vec<bool>,
    /// `max |velocity_form − density_form|` over the comparison region.
    pub max_difference: f64,
    /// The same difference with `2h` stencils.
    pub truncation_bound: f64,
}

fn max_abs_diff(a: &[Option<f64>], b: &[Option<f64>], region: &[bool]) -> f64 {
    a.iter()
        .zip(b)
        .zip(region)
        .filter(|(_, &r)| r)
        .filter_map(|((x, y), _)| Some((x.as_ref()? - y.as_ref()?).abs()))
        .fold(0.0, f64::max)
}

pub fn quantum_potential(state: &WaveFunctionState) -> QuantumPotential {
    let ok1 = support(state, 2);
    let ok2 = support(state, 4);
    let vf = vq_velocity_form(state, &ok1, 1);
    let df = vq_density_form(state, &ok1, 1);
    let vf2 = vq_velocity_form(state, &ok2, 2);
    let df2 = vq_density_form(state, &ok2, 2);
    let nan = |v: &[Option<f64>]| v.iter().map(|x| x.unwrap_or(f64::NAN)).collect::<Vec<_>>();
    QuantumPotential {
        x: state.grid.points(),
        velocity_form: nan(&vf),
        density_form: nan(&df),
        mask: vf.iter().zip(&df).map(|(a, b)| a.is_some() && b.is_some()).collect(),
        max_difference: max_abs_diff(&vf, &df, &ok2),
        truncation_bound: max_abs_diff(&vf2, &df2, &ok2),
    }
}

/// Maximum magnitude of each term of the access-velocity equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct TermMaxima {
    pub time_derivative: f64,
    pub advection: f64,
    pub diffusion: f64,
    pub external_force: f64,
    pub quantum_force: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavierStokesResidual {
    pub x: Vec<f64>,
    /// `∂v_a/∂t + v_a v_a′ − D v_a″ + (V + 2V_Q)′/m`; NaN where masked.
    pub residual: Vec<f64>,
    pub terms: TermMaxima,
    pub max_abs: f64,
    /// ρ-weighted RMS of the residual over the ρ-weighted RMS of the
    /// pointwise largest term. Tails, where `ψ′/ψ` amplifies roundoff, carry
    /// little weight.
    pub normalized: f64,
    /// `normalized` evaluated with `2h` stencils.
    pub truncation_bound: f64,
    pub time_derivative_included: bool,
}

fn access_velocity(state: &WaveFunctionState, ok: &[bool], s: usize) -> Vec<Option<f64>> {
    velocities_at(state, ok, s).into_iter().map(|p| p.map(|(v, u)| v - u)).collect()
}

fn ns_pass(
    state: &WaveFunctionState,
    around: Option<(&WaveFunctionState, &WaveFunctionState)>,
    s: usize,
) -> (Vec<Option<f64>>, Vec<f64>, TermMaxima) {
    let reach = 2 * s as isize;
    let ok = support(state, reach);
    let g = &state.grid;
    let m = state.units.mass;
    let d = state.diffusion();
    let va = access_velocity(state, &ok, s);
    let vq = vq_density_form(state, &support(state, s as isize), s);
    let dva_dt: Option<Vec<Option<f64>>> = around.map(|(prev, next)| {
        let span = next.time - prev.time;
        let a = access_velocity(prev, &support(prev, reach), s);
        let b = access_velocity(next, &support(next, reach), s);
        a.iter().zip(&b).map(|(x, y)| Some((y.as_ref()? - x.as_ref()?) / span)).collect()
    });
    let mut terms = TermMaxima::default();
    let mut scale = vec![0.0; g.n_points];
    let residual = (0..g.n_points)
        .map(|i| {
            if !ok[i] {
                return None;
            }
            let a = va[i]?;
            let da = central(g, i, s, |j| va[j])?;
            let d2a = second(g, i, s, |j| va[j])?;
            let dv = central(g, i, s, |j| Some(state.potential.energy(g.x(j), m)))? / m;
            let dq = 2.0 * central(g, i, s, |j| vq[j])? / m;
            let dt = match &dva_dt {
                Some(t) => t[i]?,
                None => 0.0,
            };
            terms.time_derivative = terms.time_derivative.max(dt.abs());
            terms.advection = terms.advection.max((a * da).abs());
            terms.diffusion = terms.diffusion.max((d * d2a).abs());
            terms.external_force = terms.external_force.max(dv.abs());
            terms.quantum_force = terms.quantum_force.max(dq.abs());
            scale[i] = [dt, a * da, d * d2a, dv, dq].into_iter().fold(0.0f64, |m, t| m.max(t.abs()));
            Some(dt + a * da - d * d2a + dv + dq)
        })
        .collect();
    (residual, scale, terms)
}

/// `‖r‖_ρ / ‖scale‖_ρ` with `‖f‖_ρ² = Σ ρ f²` over points where `r` exists.
fn weighted_ratio(rho: &[f64], r: &[Option<f64>], scale: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for ((w, r), s) in rho.iter().zip(r).zip(scale) {
        if let Some(r) = r {
            num += w * r * r;
            den += w * s * s;
        }
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        0.0
    }
}

/// Residual of the access-velocity (Navier–Stokes-form) equation at
/// `state`. With `around = Some((prev, next))` the time derivative is the
/// central difference between those states; otherwise it is taken as zero.
pub fn navier_stokes_residual(
    state: &WaveFunctionState,
    around: Option<(&WaveFunctionState, &WaveFunctionState)>,
) -> NavierStokesResidual {
    let (res, scale, terms) = ns_pass(state, around, 1);
    let (res2, scale2, _) = ns_pass(state, around, 2);
    let max_abs = |r: &[Option<f64>]| r.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let rho = state.rho();
    let normalized = weighted_ratio(&rho, &res, &scale);
    let truncation_bound = weighted_ratio(&rho, &res2, &scale2);
    NavierStokesResidual {
        x: state.grid.points(),
        max_abs: max_abs(&res),
        residual: res.iter().map(|r| r.unwrap_or(f64::NAN)).collect(),
        terms,
        normalized,
        truncation_bound,
        time_derivative_included: around.is_some(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityResidual {
    /// `max |∂ρ/∂t + (ρv)′|` over the larger of the two terms.
    pub normalized: f64,
    pub truncation_bound: f64,
    pub max_abs: f64,
}

fn continuity_pass(prev: &WaveFunctionState, state: &WaveFunctionState, next: &WaveFunctionState, s: usize) -> (f64, f64) {
    let ok = support(state, s as isize);
    let vel = velocities_at(state, &ok, s);
    let rho = state.rho();
    let (rp, rn) = (prev.rho(), next.rho());
    let span = next.time - prev.time;
    let flux = |j: usize| vel[j].map(|(v, _)| rho[j] * v);
    let (mut worst, mut scale) = (0.0f64, 0.0f64);
    for i in 0..state.grid.n_points {
        let Some(div) = central(&state.grid, i, s, flux) else { continue };
        let dt = (rn[i] - rp[i]) / span;
        worst = worst.max((dt + div).abs());
        scale = scale.max(dt.abs()).max(div.abs());
    }
    (worst, scale)
}

/// Continuity residual at `state` from its neighbours in time.
pub fn continuity_residual(prev: &WaveFunctionState, state: &WaveFunctionState, next: &WaveFunctionState) -> ContinuityResidual {
    let (r1, s1) = continuity_pass(prev, state, next, 1);
    let (r2, s2) = continuity_pass(prev, state, next, 2);
    let ratio = |r: f64, s: f64| if s > 0.0 { r / s } else { 0.0 };
    ContinuityResidual {
        normalized: ratio(r1, s1),
        truncation_bound: ratio(r2, s2),
        max_abs: r1,
    }
}

/// Harmonic-oscillator ground state displaced to `x0` (a coherent state at
/// `t = 0`).
/// A packet that is not negligible at a hard wall is reflected by it, so the
/// edge amplitude is held to the same limit as bound states; the packet
/// swings to `−x0` as well.
pub fn coherent_state(grid: &GridSpec, units: QuantumUnits, omega: f64, x0: f64) -> Result<WaveFunctionState> {
    let alpha = units.mass * omega / units.hbar;
    if grid.boundary == Boundary::HardWall {
        let reach = (grid.x_min.abs().min(grid.x_max.abs()) - x0.abs()).max(0.0);
        let ratio = (-0.5 * alpha * reach * reach).exp();
        if ratio >= BOUNDARY_LIMIT {
            return Err(Error::GridTooNarrow {
                ratio,
                limit: BOUNDARY_LIMIT,
            });
        }
    }
    WaveFunctionState::from_fn(grid.clone(), units, Potential::Harmonic { omega }, |x| {
        Complex64::new((-0.5 * alpha * (x - x0).powi(2)).exp(), 0.0)
    })
}

/// Gaussian packet `exp(−(x−x0)²/4σ² + ikx)` with position spread `σ`.
pub fn gaussian_packet(
    grid: &GridSpec,
    units: QuantumUnits,
    potential: Potential,
    x0: f64,
    sigma: f64,
    k: f64,
) -> Result<WaveFunctionState> {
    WaveFunctionState::from_fn(grid.clone(), units, potential, |x| {
        Complex64::from_polar((-(x - x0).powi(2) / (4.0 * sigma * sigma)).exp(), k * x)
    })
}

/// `exp(ikx)` on a ring, with `k = 2π·winding/L`.
pub fn plane_wave(grid: &GridSpec, units: QuantumUnits, winding: i32) -> Result<WaveFunctionState> {
    if grid.boundary != Boundary::Periodic {
        return Err(Error::invalid("grid.boundary", "plane waves need a periodic grid"));
    }
    let k = 2.0 * PI * winding as f64 / (grid.x_max - grid.x_min);
    WaveFunctionState::from_fn(grid.clone(), units, Potential::Free, |x| Complex64::from_polar(1.0, k * x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic() -> (Potential, GridSpec, QuantumUnits) {
        (Potential::Harmonic { omega: 1.0 }, GridSpec::new(-10.0, 10.0, 2001), QuantumUnits::default())
    }

    #[test]
    fn small_grids_are_rejected() {
        let (pot, _, u) = harmonic();
        assert!(solve_stationary(&pot, &GridSpec::new(-1.0, 1.0, 8), u, 1).is_err());
    }

    #[test]
    fn narrow_grid_fails_boundary_check() {
        let (pot, _, u) = harmonic();
        let err = solve_stationary(&pot, &GridSpec::new(-2.0, 2.0, 400), u, 1).unwrap_err();
        assert!(matches!(err, Error::GridTooNarrow { .. }));
    }

    #[test]
    fn too_many_states_is_an_error() {
        let (pot, g, u) = harmonic();
        assert!(solve_stationary(&pot, &g, u, 2000).is_err());
    }

    #[test]
    fn harmonic_spectrum_and_orthonormality() {
        let (pot, g, u) = harmonic();
        let es = solve_stationary(&pot, &g, u, 6).unwrap();
        for (n, e) in es.energies.iter().enumerate() {
            let exact = n as f64 + 0.5;
            assert!(((e - exact) / exact).abs() < 1e-4, "E_{n} = {e}");
        }
        assert!(es.gram_error < 1e-8);
    }

    #[test]
    fn box_spectrum_ratio() {
        let es = solve_stationary(&Potential::Free, &GridSpec::new(0.0, 1.0, 2001), QuantumUnits::default(), 2).unwrap();
        assert!((es.energies[1] / es.energies[0] - 4.0).abs() < 1e-3);
        let exact = PI * PI / 2.0;
        assert!((es.energies[0] / exact - 1.0).abs() < 1e-5);
    }

    #[test]
    fn ring_ground_state_is_constant() {
        let g = GridSpec::periodic(0.0, 2.0 * PI, 64);
        let es = solve_stationary(&Potential::Free, &g, QuantumUnits::default(), 1).unwrap();
        assert!(es.energies[0].abs() < 1e-12);
        let first = es.states[0][0];
        assert!(es.states[0].iter().all(|v| (v - first).abs() < 1e-10));
    }

    #[test]
    fn stationary_state_only_acquires_a_phase() {
        let (pot, g, u) = harmonic();
        let es = solve_stationary(&pot, &g, u, 1).unwrap();
        let s0 = es.state(0);
        let s1 = evolve(&s0, 0.01, 1000).unwrap();
        assert!((s1.norm() - 1.0).abs() < 1e-6);
        assert!((s0.overlap(&s1).norm() - 1.0).abs() < 1e-6);
        let drift = s0.rho().iter().zip(s1.rho()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-6);
    }

    #[test]
    fn free_packet_spreads_analytically() {
        let g = GridSpec::new(-40.0, 40.0, 4001);
        let u = QuantumUnits::default();
        let sigma0 = 1.0;
        let s0 = gaussian_packet(&g, u, Potential::Free, 0.0, sigma0, 0.0).unwrap();
        let t = 4.0;
        let s1 = evolve(&s0, 0.005, 800).unwrap();
        let d = u.diffusion();
        let exact = sigma0 * sigma0 + (d * t / sigma0).powi(2);
        assert!((s1.position_variance() / exact - 1.0).abs() < 1e-3);
    }

    #[test]
    fn two_level_superposition_oscillates() {
        let (pot, g, u) = harmonic();
        let es = solve_stationary(&pot, &g, u, 2).unwrap();
        let psi: Vec<Complex64> = es.states[0]
            .iter()
            .zip(&es.states[1])
            .map(|(a, b)| Complex64::new(a + b, 0.0))
            .collect();
        let mut s = WaveFunctionState::new(g, u, pot, psi).unwrap();
        // ⟨0|x|1⟩ = ±1/√2 depending on the sign convention of ψ₁
        let amp = s.mean_position();
        assert!((amp.abs() - 0.5f64.sqrt()).abs() < 1e-4);
        for _ in 0..4 {
            s = evolve(&s, 0.005, 100).unwrap();
            let expect = amp * s.time.cos();
            assert!((s.mean_position() - expect).abs() < 1e-3, "t={}", s.time);
        }
    }

    #[test]
    fn oversized_step_is_rejected() {
        let (pot, g, u) = harmonic();
        let s = coherent_state(&g, u, 1.0, 0.0).unwrap();
        assert!(matches!(evolve(&s, 10.0, 1), Err(Error::StepSize(_))));
    }

    #[test]
    fn real_state_has_no_flow() {
        let (pot, g, u) = harmonic();
        let es = solve_stationary(&pot, &g, u, 3).unwrap();
        for n in 0..3 {
            let f = velocity_fields(&es.state(n));
            assert!(f.v.iter().zip(&f.mask).filter(|(_, &m)| m).all(|(v, _)| *v == 0.0));
        }
    }

    #[test]
    fn ground_state_osmotic_velocity() {
        let (pot, g, u) = harmonic();
        let f = velocity_fields(&solve_stationary(&pot, &g, u, 1).unwrap().state(0));
        for ((x, uu), m) in f.x.iter().zip(&f.u).zip(&f.mask) {
            if *m && x.abs() < 4.0 {
                assert!((uu + x).abs() < 1e-3 * (1.0 + x.abs()), "x={x}");
            }
        }
    }

    #[test]
    fn plane_wave_has_constant_flow() {
        let g = GridSpec::periodic(0.0, 2.0 * PI, 256);
        let u = QuantumUnits::default();
        let s = plane_wave(&g, u, 3).unwrap();
        let f = velocity_fields(&s);
        let h = g.spacing();
        let exact = 2.0 * u.diffusion() * (3.0 * h).sin() / h;
        assert!(f.mask.iter().all(|&m| m));
        for (v, uu) in f.v.iter().zip(&f.u) {
            assert!((v - exact).abs() < 1e-12);
            assert!(uu.abs() < 1e-12);
        }
        assert!((exact - 3.0).abs() < 5e-3);
    }

    #[test]
    fn ground_state_quantum_potential_balances_v() {
        let (pot, g, u) = harmonic();
        let s = solve_stationary(&pot, &g, u, 1).unwrap().state(0);
        let q = quantum_potential(&s);
        for i in 0..g.n_points {
            let x = g.x(i);
            if q.mask[i] && x.abs() < 4.0 {
                let total = pot.energy(x, 1.0) + q.density_form[i];
                assert!((total - 0.5).abs() < 1e-4, "x={x}");
            }
        }
        assert!(q.max_difference <= q.truncation_bound);
    }

    #[test]
    fn constant_density_has_no_quantum_potential() {
        let g = GridSpec::periodic(0.0, 2.0 * PI, 128);
        let s = plane_wave(&g, QuantumUnits::default(), 2).unwrap();
        let q = quantum_potential(&s);
        assert!(q.density_form.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn excited_state_forms_agree_away_from_node() {
        let (pot, g, u) = harmonic();
        let s = solve_stationary(&pot, &g, u, 2).unwrap().state(1);
        let q = quantum_potential(&s);
        assert!(!q.mask[1000], "node must be masked");
        assert!(q.max_difference <= q.truncation_bound);
    }

    #[test]
    fn ground_state_hydrodynamic_residual() {
        let g = GridSpec::new(-6.0, 6.0, 1000);
        let (pot, _, u) = harmonic();
        let s = solve_stationary(&pot, &g, u, 1).unwrap().state(0);
        let r = navier_stokes_residual(&s, None);
        assert!(r.normalized <= r.truncation_bound);
        assert!(r.normalized < 1e-3, "{}", r.normalized);
    }

    #[test]
    fn continuity_holds_during_evolution() {
        let g = GridSpec::new(-10.0, 10.0, 2001);
        let u = QuantumUnits::default();
        let s0 = coherent_state(&g, u, 1.0, 1.0).unwrap();
        let a = evolve(&s0, 0.001, 500).unwrap();
        let b = evolve(&a, 0.001, 1).unwrap();
        let c = evolve(&b, 0.001, 1).unwrap();
        let r = continuity_residual(&a, &b, &c);
        assert!(r.normalized <= r.truncation_bound, "{r:?}");
        assert!(r.normalized < 1e-3);
    }

    #[test]
    fn eigen_csv_is_long_format() {
        let (pot, _, u) = harmonic();
        let es = solve_stationary(&pot, &GridSpec::new(-8.0, 8.0, 101), u, 2).unwrap();
        let mut buf = Vec::new();
        es.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,E_n,x,psi\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 101);
    }
}
