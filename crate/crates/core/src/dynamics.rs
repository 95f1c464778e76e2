//! Ensemble integration of the field-driven equation of motion
//!
//! ```text
//! m ẍ = f(x) + τ f′(x) ẋ + e E(t)
//! ```
//!
//! i.e. the Abraham–Lorentz–type equation with the radiation-reaction term
//! `mτ x⃛` replaced by its order-reduced form `τ f′(x) ẋ`. Each trajectory
//! is driven by its own field realization and integrated with classical RK4;
//! the field is smooth once synthesized, so no stochastic calculus is needed.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{make_field, FieldSpec, GridSampler};
use crate::potential::Potential;
use crate::rng::{self, NormalSource};
use crate::stats;

pub const SCHEMA_VERSION: u32 = 1;

/// Above this value of `τ·ω` the order reduction is flagged as unreliable.
pub const ORDER_REDUCTION_LIMIT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSpec {
    pub mass: f64,
    /// Radiation-reaction time.
    pub tau: f64,
    /// Coupling charge. When absent the self-consistent value
    /// `e = sqrt(3 m c³ τ / 2)` is used, so that `τ = 2e²/3mc³` holds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charge: Option<f64>,
    pub potential: Potential,
}

impl ParticleSpec {
    pub fn new(mass: f64, tau: f64, potential: Potential) -> Self {
        Self {
            mass,
            tau,
            charge: None,
            potential,
        }
    }

    /// Builds a particle from its charge, with `τ = 2e²/3mc³`.
    pub fn from_charge(mass: f64, charge: f64, c: f64, potential: Potential) -> Self {
        Self {
            mass,
            tau: radiation_time(charge, mass, c),
            charge: Some(charge),
            potential,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::invalid("particle.mass", "must be positive"));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::invalid("particle.tau", "must be non-negative"));
        }
        self.potential.validate()
    }

    pub fn charge_for(&self, field: &FieldSpec) -> f64 {
        self.charge
            .unwrap_or_else(|| (1.5 * self.mass * field.c.powi(3) * self.tau).sqrt())
    }

    pub fn force(&self, x: f64) -> f64 {
        self.potential.force(x, self.mass)
    }

    pub fn potential_energy(&self, x: f64) -> f64 {
        self.potential.energy(x, self.mass)
    }

    pub fn energy(&self, x: f64, v: f64) -> f64 {
        0.5 * self.mass * v * v + self.potential_energy(x)
    }

    /// `ẍ` from the reduced equation of motion; `drive` is `eE(t)`.
    #[inline]
    pub fn acceleration(&self, x: f64, v: f64, drive: f64) -> f64 {
        let m = self.mass;
        (self.potential.force(x, m) + self.tau * self.potential.force_gradient(x, m) * v + drive) / m
    }

    /// `τ·ω` for potentials with a characteristic frequency.
    pub fn order_reduction_parameter(&self) -> Option<f64> {
        self.potential
            .characteristic_frequency(self.mass)
            .map(|w| self.tau * w)
    }
}

/// `τ = 2e² / 3mc³`.
pub fn radiation_time(charge: f64, mass: f64, c: f64) -> f64 {
    2.0 * charge * charge / (3.0 * mass * c.powi(3))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    #[serde(default)]
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_steps: usize) -> Self {
        Self { t0, dt, n_steps }
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.n_steps as f64 * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid("time.dt", "must be positive"));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("time.n_steps", "must be at least 1"));
        }
        Ok(())
    }
}

fn default_scale() -> f64 {
    1.0
}

/// Initial-condition samplers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialCondition {
    /// Every trajectory starts at `(x, v)`; `(0, 0)` is the cold start.
    Delta { x: f64, v: f64 },
    /// Independent Gaussians in position and velocity.
    Gaussian {
        x_mean: f64,
        v_mean: f64,
        x_sigma: f64,
        v_sigma: f64,
    },
    /// Harmonic ground-state guess `σ_x² = ħ/2mω`, `σ_v² = ħω/2m`, with both
    /// variances multiplied by `scale` (10 gives a hot start).
    Stationary {
        #[serde(default = "default_scale")]
        scale: f64,
    },
}

impl InitialCondition {
    pub fn cold() -> Self {
        InitialCondition::Delta { x: 0.0, v: 0.0 }
    }

    fn sample(&self, p: &ParticleSpec, hbar: f64, seed: u64) -> Result<(f64, f64)> {
        let mut normals = NormalSource::new(rng::stream_rng(seed, rng::STREAM_INITIAL_CONDITION));
        match *self {
            InitialCondition::Delta { x, v } => Ok((x, v)),
            InitialCondition::Gaussian {
                x_mean,
                v_mean,
                x_sigma,
                v_sigma,
            } => Ok((
                x_mean + x_sigma * normals.sample(),
                v_mean + v_sigma * normals.sample(),
            )),
            InitialCondition::Stationary { scale } => {
                let w = p.potential.characteristic_frequency(p.mass).ok_or_else(|| {
                    Error::invalid("initial", "stationary guess needs a confining quadratic potential")
                })?;
                let sx = (scale * hbar / (2.0 * p.mass * w)).sqrt();
                let sv = (scale * hbar * w / (2.0 * p.mass)).sqrt();
                Ok((sx * normals.sample(), sv * normals.sample()))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum TrajectoryStatus {
    Ok,
    /// State became NaN or infinite at this step; later records are NaN.
    NonFinite { step: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: usize,
    pub seed: u64,
    pub status: TrajectoryStatus,
    pub x: Vec<f64>,
    /// Velocities at the records; empty for position-only processes.
    pub v: Vec<f64>,
    /// Field force `eE(t)` at the records; empty when undriven or unknown.
    pub drive: Vec<f64>,
}

impl Trajectory {
    pub fn is_ok(&self) -> bool {
        self.status == TrajectoryStatus::Ok
    }
}

/// Trajectories sharing one time grid, recorded every `record_stride` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    pub grid: TimeGrid,
    pub record_stride: usize,
    pub trajectories: Vec<Trajectory>,
    pub warnings: Vec<String>,
}

impl TrajectoryEnsemble {
    pub fn n_records(&self) -> usize {
        self.grid.n_steps / self.record_stride + 1
    }

    pub fn record_dt(&self) -> f64 {
        self.grid.dt * self.record_stride as f64
    }

    pub fn record_time(&self, j: usize) -> f64 {
        self.grid.t0 + (j * self.record_stride) as f64 * self.grid.dt
    }

    /// Trajectories that finished without a non-finite state.
    pub fn valid(&self) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.iter().filter(|t| t.is_ok())
    }

    pub fn n_flagged(&self) -> usize {
        self.trajectories.iter().filter(|t| !t.is_ok()).count()
    }

    /// Record indices whose times fall inside `[t_start, t_end]`.
    pub fn window_indices(&self, window: (f64, f64)) -> std::ops::Range<usize> {
        let eps = 1e-9 * self.record_dt();
        let n = self.n_records();
        let first = (0..n)
            .find(|&j| self.record_time(j) >= window.0 - eps)
            .unwrap_or(n);
        let last = (0..n)
            .rev()
            .find(|&j| self.record_time(j) <= window.1 + eps)
            .map_or(0, |j| j + 1);
        first..last.max(first)
    }

    /// All valid positions recorded inside the window.
    pub fn window_positions(&self, window: (f64, f64)) -> Vec<f64> {
        let range = self.window_indices(window);
        self.valid()
            .flat_map(|t| t.x[range.clone()].iter().copied())
            .collect()
    }

    /// `⟨x²⟩ − ⟨x⟩²` over the window with a trajectory-clustered error.
    pub fn position_variance(&self, window: (f64, f64)) -> Result<(f64, f64)> {
        let range = self.window_indices(window);
        if range.is_empty() {
            return Err(Error::invalid("window", "no records inside the window"));
        }
        let n = range.len() as f64;
        let per: Vec<(f64, f64)> = self
            .valid()
            .map(|t| {
                let xs = &t.x[range.clone()];
                (xs.iter().sum::<f64>(), xs.iter().map(|x| x * x).sum::<f64>())
            })
            .collect();
        let counts = vec![n; per.len()];
        let sums: Vec<f64> = per.iter().map(|p| p.0).collect();
        let (mean, _) = stats::cluster_ratio(&sums, &counts);
        let centred: Vec<f64> = per
            .iter()
            .map(|&(s, q)| q - 2.0 * mean * s + n * mean * mean)
            .collect();
        Ok(stats::cluster_ratio(&centred, &counts))
    }

    /// Columnar CSV `traj_id,t,x,v` preceded by a schema line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# schema_version={SCHEMA_VERSION}")?;
        writeln!(out, "traj_id,t,x,v")?;
        for tr in &self.trajectories {
            for (j, x) in tr.x.iter().enumerate() {
                let v = tr.v.get(j).copied().unwrap_or(f64::NAN);
                writeln!(out, "{},{:e},{:e},{:e}", tr.id, self.record_time(j), x, v)?;
            }
        }
        Ok(())
    }

    /// Little-endian columnar binary dump.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let has_v = self.trajectories.iter().any(|t| !t.v.is_empty());
        let has_drive = self.trajectories.iter().any(|t| !t.drive.is_empty());
        out.write_all(BINARY_MAGIC)?;
        out.write_all(&SCHEMA_VERSION.to_le_bytes())?;
        out.write_all(&(u32::from(has_v) | (u32::from(has_drive) << 1)).to_le_bytes())?;
        out.write_all(&(self.trajectories.len() as u64).to_le_bytes())?;
        out.write_all(&(self.n_records() as u64).to_le_bytes())?;
        out.write_all(&(self.record_stride as u64).to_le_bytes())?;
        out.write_all(&self.grid.t0.to_le_bytes())?;
        out.write_all(&self.grid.dt.to_le_bytes())?;
        out.write_all(&(self.grid.n_steps as u64).to_le_bytes())?;
        let nan_column = vec![f64::NAN; self.n_records()];
        for tr in &self.trajectories {
            out.write_all(&(tr.id as u64).to_le_bytes())?;
            out.write_all(&tr.seed.to_le_bytes())?;
            let status = match tr.status {
                TrajectoryStatus::Ok => u64::MAX,
                TrajectoryStatus::NonFinite { step } => step as u64,
            };
            out.write_all(&status.to_le_bytes())?;
            let mut columns: Vec<&[f64]> = vec![&tr.x];
            if has_v {
                columns.push(if tr.v.is_empty() { &nan_column } else { &tr.v });
            }
            if has_drive {
                columns.push(if tr.drive.is_empty() { &nan_column } else { &tr.drive });
            }
            for col in columns {
                for v in col {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let bad = |m: &str| Error::Config(format!("ensemble dump: {m}"));
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(&mut input)?;
        if version != SCHEMA_VERSION {
            return Err(bad(&format!("unsupported schema_version {version}")));
        }
        let flags = read_u32(&mut input)?;
        let n_traj = read_u64(&mut input)? as usize;
        let n_records = read_u64(&mut input)? as usize;
        let record_stride = read_u64(&mut input)? as usize;
        let t0 = read_f64(&mut input)?;
        let dt = read_f64(&mut input)?;
        let n_steps = read_u64(&mut input)? as usize;
        if record_stride == 0 || n_steps / record_stride + 1 != n_records {
            return Err(bad("inconsistent record count"));
        }
        let column = |input: &mut R| -> Result<Vec<f64>> {
            (0..n_records).map(|_| read_f64(input)).collect()
        };
        let mut trajectories = Vec::with_capacity(n_traj);
        for _ in 0..n_traj {
            let id = read_u64(&mut input)? as usize;
            let seed = read_u64(&mut input)?;
            let status = match read_u64(&mut input)? {
                u64::MAX => TrajectoryStatus::Ok,
                step => TrajectoryStatus::NonFinite { step: step as usize },
            };
            let x = column(&mut input)?;
            let v = if flags & 1 != 0 { column(&mut input)? } else { Vec::new() };
            let drive = if flags & 2 != 0 { column(&mut input)? } else { Vec::new() };
            trajectories.push(Trajectory {
                id,
                seed,
                status,
                x,
                v,
                drive,
            });
        }
        Ok(Self {
            grid: TimeGrid::new(t0, dt, n_steps),
            record_stride,
            trajectories,
            warnings: Vec::new(),
        })
    }
}

const BINARY_MAGIC: &[u8; 8] = b"SEDENS\0\x01";

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    read_u64(r).map(f64::from_bits)
}

/// Everything needed to integrate one ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleRequest<'a> {
    pub particle: &'a ParticleSpec,
    /// `None` integrates the undriven equation.
    pub field: Option<&'a FieldSpec>,
    pub initial: &'a InitialCondition,
    pub grid: TimeGrid,
    pub n_traj: usize,
    pub master_seed: u64,
    pub record_stride: usize,
    /// Worker threads; `0` uses the global pool.
    pub threads: usize,
}

/// Integrates `n_traj` independent trajectories. Trajectory `i` uses the
/// seed `derive_seed(master_seed, i)` for both its field and its initial
/// condition, so the result is independent of scheduling.
pub fn integrate_ensemble(req: &EnsembleRequest<'_>) -> Result<TrajectoryEnsemble> {
    let p = req.particle;
    p.validate()?;
    req.grid.validate()?;
    if req.n_traj == 0 {
        return Err(Error::invalid("n_traj", "must be at least 1"));
    }
    if req.record_stride == 0 || req.record_stride > req.grid.n_steps {
        return Err(Error::invalid("record_stride", "must be in 1..=n_steps"));
    }
    let mut warnings = Vec::new();
    if let Some(fs) = req.field {
        fs.validate()?;
        let limit = TAU / (10.0 * fs.omega_cutoff);
        if req.grid.dt > limit {
            return Err(Error::StepSize(format!(
                "dt = {} exceeds 2π/(10 ω_c) = {limit}",
                req.grid.dt
            )));
        }
    }
    if let Some(r) = p.order_reduction_parameter() {
        if r > ORDER_REDUCTION_LIMIT {
            warnings.push(format!(
                "tau*omega = {r:.3} > {ORDER_REDUCTION_LIMIT}: order reduction of the radiation reaction is unreliable"
            ));
        }
    }

    let n_samples = 2 * req.grid.n_steps + 1;
    let sampler = req
        .field
        .map(|fs| GridSampler::for_spec(fs, req.grid.t0, 0.5 * req.grid.dt, n_samples));
    let hbar = req.field.map_or(1.0, |f| f.hbar);

    let run = |i: usize| -> Result<Trajectory> {
        let seed = rng::derive_seed(req.master_seed, i as u64);
        let (x0, v0) = req.initial.sample(p, hbar, seed)?;
        let drive = match (req.field, &sampler) {
            (Some(fs), Some(sampler)) => {
                let fr = make_field(fs, seed)?;
                let e = p.charge_for(fs);
                let mut d = sampler.sample(&fr, 0);
                d.iter_mut().for_each(|v| *v *= e);
                Some(d)
            }
            _ => None,
        };
        Ok(integrate_one(p, &req.grid, req.record_stride, i, seed, (x0, v0), drive.as_deref()))
    };

    let trajectories: Result<Vec<Trajectory>> = if req.threads == 0 {
        (0..req.n_traj).into_par_iter().map(run).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(req.threads)
            .build()
            .map_err(|e| Error::invalid("threads", e.to_string()))?
            .install(|| (0..req.n_traj).into_par_iter().map(run).collect())
    };
    let trajectories = trajectories?;
    let flagged = trajectories.iter().filter(|t| !t.is_ok()).count();
    if flagged > 0 {
        warnings.push(format!("{flagged} trajectories flagged non-finite"));
    }
    Ok(TrajectoryEnsemble {
        grid: req.grid,
        record_stride: req.record_stride,
        trajectories,
        warnings,
    })
}

/// RK4 on `(x, v)`; `drive` holds `eE` on the half-step grid.
fn integrate_one(
    p: &ParticleSpec,
    grid: &TimeGrid,
    stride: usize,
    id: usize,
    seed: u64,
    (mut x, mut v): (f64, f64),
    drive: Option<&[f64]>,
) -> Trajectory {
    let n_records = grid.n_steps / stride + 1;
    let mut xs = Vec::with_capacity(n_records);
    let mut vs = Vec::with_capacity(n_records);
    let mut ds = Vec::with_capacity(if drive.is_some() { n_records } else { 0 });
    let d = |j: usize| drive.map_or(0.0, |d| d[j]);
    let h = grid.dt;
    let mut status = TrajectoryStatus::Ok;

    for step in 0..=grid.n_steps {
        if step % stride == 0 {
            xs.push(x);
            vs.push(v);
            if drive.is_some() {
                ds.push(d(2 * step));
            }
        }
        if step == grid.n_steps {
            break;
        }
        let (d0, d1, d2) = (d(2 * step), d(2 * step + 1), d(2 * step + 2));
        let k1x = v;
        let k1v = p.acceleration(x, v, d0);
        let k2x = v + 0.5 * h * k1v;
        let k2v = p.acceleration(x + 0.5 * h * k1x, k2x, d1);
        let k3x = v + 0.5 * h * k2v;
        let k3v = p.acceleration(x + 0.5 * h * k2x, k3x, d1);
        let k4x = v + h * k3v;
        let k4v = p.acceleration(x + h * k3x, k4x, d2);
        x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        if !(x.is_finite() && v.is_finite()) {
            status = TrajectoryStatus::NonFinite { step: step + 1 };
            break;
        }
    }
    for col in [&mut xs, &mut vs] {
        col.resize(n_records, f64::NAN);
    }
    if drive.is_some() {
        ds.resize(n_records, f64::NAN);
    }
    Trajectory {
        id,
        seed,
        status,
        x: xs,
        v: vs,
        drive: ds,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBalanceReport {
    pub schema_version: u32,
    pub window: (f64, f64),
    pub n_trajectories: usize,
    /// `⟨eE·ẋ⟩`.
    pub mean_absorbed_power: f64,
    pub absorbed_se: f64,
    /// `mτ⟨ẍ²⟩` with `ẍ` from the equation of motion.
    pub mean_radiated_power: f64,
    pub radiated_se: f64,
    /// `⟨½mẋ² + V(x)⟩`.
    pub mean_energy: f64,
    pub energy_se: f64,
    /// `(absorbed − radiated) / radiated`; NaN when nothing is radiated.
    pub relative_imbalance: f64,
    pub imbalance_se: f64,
    /// Mean energy change from the first to the second half of the window.
    pub energy_drift: f64,
    pub energy_drift_se: f64,
    /// False when the energy drifts by more than three standard errors.
    pub stationary: bool,
    pub warnings: Vec<String>,
}

/// Absorbed and radiated power plus mean energy, averaged over trajectories
/// and over the records inside `window`.
pub fn energy_balance(
    ens: &TrajectoryEnsemble,
    p: &ParticleSpec,
    window: (f64, f64),
) -> Result<EnergyBalanceReport> {
    let range = ens.window_indices(window);
    if range.len() < 2 {
        return Err(Error::invalid("window", "fewer than two records inside the window"));
    }
    let mut warnings = Vec::new();
    if let Some(w) = p.potential.characteristic_frequency(p.mass) {
        let periods = (window.1 - window.0) * w / TAU;
        if periods < 10.0 {
            warnings.push(format!("window spans only {periods:.1} periods of the systematic motion"));
        }
    }
    let mid = range.start + range.len() / 2;
    let mut absorbed = Vec::new();
    let mut radiated = Vec::new();
    let mut energy = Vec::new();
    let mut imbalance = Vec::new();
    let mut drift = Vec::new();
    for tr in ens.valid() {
        if tr.v.is_empty() {
            return Err(Error::InsufficientData("ensemble has no velocities".into()));
        }
        let (mut a, mut r, mut e) = (0.0, 0.0, 0.0);
        let (mut e_first, mut e_second) = (0.0, 0.0);
        for j in range.clone() {
            let (x, v) = (tr.x[j], tr.v[j]);
            let drive = tr.drive.get(j).copied().unwrap_or(0.0);
            let acc = p.acceleration(x, v, drive);
            let ej = p.energy(x, v);
            a += drive * v;
            r += p.mass * p.tau * acc * acc;
            e += ej;
            if j < mid {
                e_first += ej;
            } else {
                e_second += ej;
            }
        }
        let n = range.len() as f64;
        absorbed.push(a / n);
        radiated.push(r / n);
        energy.push(e / n);
        imbalance.push((a - r) / n);
        drift.push(e_second / (range.end - mid) as f64 - e_first / (mid - range.start) as f64);
    }
    if absorbed.is_empty() {
        return Err(Error::InsufficientData("no valid trajectories".into()));
    }
    let (ma, sa) = stats::mean_and_se(&absorbed);
    let (mr, sr) = stats::mean_and_se(&radiated);
    let (me, se) = stats::mean_and_se(&energy);
    let (mi, si) = stats::mean_and_se(&imbalance);
    let (md, sd) = stats::mean_and_se(&drift);
    let stationary = !(md.abs() > 3.0 * sd);
    if !stationary {
        warnings.push(format!(
            "mean energy drifts by {md:.4e} ± {sd:.1e} across the window: not stationary"
        ));
    }
    let (relative_imbalance, imbalance_se) = if mr > 0.0 {
        (mi / mr, si / mr)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(EnergyBalanceReport {
        schema_version: SCHEMA_VERSION,
        window,
        n_trajectories: absorbed.len(),
        mean_absorbed_power: ma,
        absorbed_se: sa,
        mean_radiated_power: mr,
        radiated_se: sr,
        mean_energy: me,
        energy_se: se,
        relative_imbalance,
        imbalance_se,
        energy_drift: md,
        energy_drift_se: sd,
        stationary,
        warnings,
    })
}

/// Ensemble mean energy at every record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationCurve {
    pub times: Vec<f64>,
    pub mean_energy: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Per-trajectory energies are kept to form window averages with
    /// trajectory-clustered errors.
    #[serde(skip)]
    per_trajectory: Vec<Vec<f64>>,
}

pub fn relaxation_curve(ens: &TrajectoryEnsemble, p: &ParticleSpec) -> RelaxationCurve {
    let per_trajectory: Vec<Vec<f64>> = ens
        .valid()
        .filter(|t| !t.v.is_empty())
        .map(|t| t.x.iter().zip(&t.v).map(|(&x, &v)| p.energy(x, v)).collect())
        .collect();
    let n = ens.n_records();
    let mut mean_energy = Vec::with_capacity(n);
    let mut std_error = Vec::with_capacity(n);
    let mut column = Vec::with_capacity(per_trajectory.len());
    for j in 0..n {
        column.clear();
        column.extend(per_trajectory.iter().map(|e| e[j]));
        let (m, s) = stats::mean_and_se(&column);
        mean_energy.push(m);
        std_error.push(s);
    }
    RelaxationCurve {
        times: (0..n).map(|j| ens.record_time(j)).collect(),
        mean_energy,
        std_error,
        per_trajectory,
    }
}

impl RelaxationCurve {
    /// Mean energy over `[t_start, t_end]` with a trajectory-clustered error.
    pub fn window_mean(&self, t_start: f64, t_end: f64) -> (f64, f64) {
        let idx: Vec<usize> = self
            .times
            .iter()
            .enumerate()
            .filter(|(_, &t)| t >= t_start && t <= t_end)
            .map(|(j, _)| j)
            .collect();
        if idx.is_empty() || self.per_trajectory.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        let per: Vec<f64> = self
            .per_trajectory
            .iter()
            .map(|e| idx.iter().map(|&j| e[j]).sum::<f64>() / idx.len() as f64)
            .collect();
        stats::mean_and_se(&per)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator(tau: f64) -> ParticleSpec {
        ParticleSpec::new(1.0, tau, Potential::Harmonic { omega: 1.0 })
    }

    fn undriven(p: &ParticleSpec, ic: &InitialCondition, grid: TimeGrid, n: usize) -> TrajectoryEnsemble {
        integrate_ensemble(&EnsembleRequest {
            particle: p,
            field: None,
            initial: ic,
            grid,
            n_traj: n,
            master_seed: 3,
            record_stride: 1,
            threads: 0,
        })
        .unwrap()
    }

    #[test]
    fn undamped_oscillator_follows_cosine() {
        let p = oscillator(0.0);
        let ens = undriven(&p, &InitialCondition::Delta { x: 1.0, v: 0.0 }, TimeGrid::new(0.0, 0.01, 2000), 1);
        let tr = &ens.trajectories[0];
        for j in (0..ens.n_records()).step_by(50) {
            let t = ens.record_time(j);
            assert!((tr.x[j] - t.cos()).abs() < 1e-8, "t={t}");
        }
        let e0 = p.energy(1.0, 0.0);
        let e1 = p.energy(*tr.x.last().unwrap(), *tr.v.last().unwrap());
        assert!((e1 - e0).abs() < 1e-10);
    }

    #[test]
    fn damped_amplitude_follows_reduced_rate() {
        // x(t) = e^{-γt/2}(cos Ωt + γ/(2Ω) sin Ωt), γ = τω₀², Ω² = ω₀² − γ²/4
        let tau = 0.05;
        let p = oscillator(tau);
        let gamma = tau;
        let t_end = 10.0 * 2.0 / gamma; // ten amplitude e-foldings
        let dt = 0.02;
        let grid = TimeGrid::new(0.0, dt, (t_end / dt) as usize);
        let ens = undriven(&p, &InitialCondition::Delta { x: 1.0, v: 0.0 }, grid, 1);
        let tr = &ens.trajectories[0];
        let big_omega = (1.0 - gamma * gamma / 4.0).sqrt();
        for j in (0..ens.n_records()).step_by(997) {
            let t = ens.record_time(j);
            let envelope = (-gamma * t / 2.0).exp();
            let exact = envelope * ((big_omega * t).cos() + gamma / (2.0 * big_omega) * (big_omega * t).sin());
            assert!((tr.x[j] - exact).abs() <= 0.01 * envelope, "t={t}");
        }
    }

    #[test]
    fn step_size_violation_is_rejected() {
        let p = oscillator(1e-3);
        let fs = FieldSpec::zero_point(1.0, 1.0, 10.0, 100);
        let err = integrate_ensemble(&EnsembleRequest {
            particle: &p,
            field: Some(&fs),
            initial: &InitialCondition::cold(),
            grid: TimeGrid::new(0.0, 0.1, 10),
            n_traj: 1,
            master_seed: 0,
            record_stride: 1,
            threads: 0,
        })
        .unwrap_err();
        assert!(matches!(err, Error::StepSize(_)));
    }

    #[test]
    fn non_finite_state_is_flagged() {
        let p = ParticleSpec::new(1.0, 0.0, Potential::Quadratic { stiffness: -1.0e6 });
        let ens = undriven(&p, &InitialCondition::Delta { x: 1.0, v: 0.0 }, TimeGrid::new(0.0, 0.01, 100_000), 1);
        let tr = &ens.trajectories[0];
        assert!(matches!(tr.status, TrajectoryStatus::NonFinite { .. }));
        assert!(tr.x.last().unwrap().is_nan());
        assert_eq!(ens.n_flagged(), 1);
        assert!(ens.warnings.iter().any(|w| w.contains("non-finite")));
    }

    #[test]
    fn large_tau_warns() {
        let p = oscillator(0.5);
        let ens = undriven(&p, &InitialCondition::cold(), TimeGrid::new(0.0, 0.1, 10), 1);
        assert!(ens.warnings.iter().any(|w| w.contains("order reduction")));
    }

    #[test]
    fn undriven_damping_absorbs_nothing() {
        let p = oscillator(0.01);
        let ens = undriven(
            &p,
            &InitialCondition::Gaussian { x_mean: 0.0, v_mean: 0.0, x_sigma: 1.0, v_sigma: 1.0 },
            TimeGrid::new(0.0, 0.05, 4000),
            20,
        );
        let rep = energy_balance(&ens, &p, (0.0, 200.0)).unwrap();
        assert_eq!(rep.mean_absorbed_power, 0.0);
        assert!(rep.mean_radiated_power > 0.0);
    }

    #[test]
    fn empty_window_is_an_error() {
        let p = oscillator(0.01);
        let ens = undriven(&p, &InitialCondition::cold(), TimeGrid::new(0.0, 0.05, 100), 1);
        assert!(energy_balance(&ens, &p, (50.0, 60.0)).is_err());
    }

    #[test]
    fn short_window_warns() {
        let p = oscillator(0.01);
        let ens = undriven(&p, &InitialCondition::Delta { x: 1.0, v: 0.0 }, TimeGrid::new(0.0, 0.05, 400), 1);
        let rep = energy_balance(&ens, &p, (0.0, 20.0)).unwrap();
        assert!(rep.warnings.iter().any(|w| w.contains("periods")));
    }

    #[test]
    fn binary_dump_round_trips() {
        let p = oscillator(0.01);
        let fs = FieldSpec {
            omega_min: 0.5,
            ..FieldSpec::zero_point(1.0, 1.0, 1.5, 50)
        };
        let ens = integrate_ensemble(&EnsembleRequest {
            particle: &p,
            field: Some(&fs),
            initial: &InitialCondition::Stationary { scale: 1.0 },
            grid: TimeGrid::new(0.0, 0.1, 100),
            n_traj: 3,
            master_seed: 1,
            record_stride: 10,
            threads: 0,
        })
        .unwrap();
        let mut buf = Vec::new();
        ens.write_binary(&mut buf).unwrap();
        let back = TrajectoryEnsemble::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back.trajectories, ens.trajectories);
        assert_eq!(back.grid, ens.grid);

        let mut csv = Vec::new();
        ens.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("# schema_version=1\ntraj_id,t,x,v\n"));
        assert_eq!(text.lines().count(), 2 + 3 * ens.n_records());
    }

    #[test]
    fn relaxation_window_mean() {
        let p = oscillator(0.0);
        let ens = undriven(&p, &InitialCondition::Delta { x: 1.0, v: 0.0 }, TimeGrid::new(0.0, 0.01, 100), 2);
        let curve = relaxation_curve(&ens, &p);
        let (m, _) = curve.window_mean(0.0, 1.0);
        assert!((m - 0.5).abs() < 1e-9);
    }
}
