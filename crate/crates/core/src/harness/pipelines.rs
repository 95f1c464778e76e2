//! Registered experiment pipelines.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{require, ExperimentConfig};
use super::report::{Check, Row};
use crate::dynamics::{self, EnsembleRequest, ParticleSpec, TrajectoryEnsemble};
use crate::error::{Error, Result};
use crate::field::{self, FieldSpec};
use crate::kinematics::{self, CoarseGrainSpec, Estimate, KinematicField, ScaleSeparation};
use crate::oracle;
use crate::potential::Potential;
use crate::schrodinger::{self, GridSpec, QuantumUnits};
use crate::{rng, stats};

pub const SED_HARMONIC_GROUND: &str = "sed_harmonic_ground";
pub const OU_CALIBRATION: &str = "ou_calibration";
pub const SCHRODINGER_REFERENCE: &str = "schrodinger_reference";
pub const FIELD_SYNTHESIS: &str = "field_synthesis";

/// Index passed to `derive_seed` for the OU sweep ensemble; trajectory
/// indices of the main ensemble never reach it.
const SWEEP_ENSEMBLE_INDEX: u64 = 1 << 48;

pub const PIPELINES: [&str; 4] = [SED_HARMONIC_GROUND, OU_CALIBRATION, SCHRODINGER_REFERENCE, FIELD_SYNTHESIS];

/// Artifact file names.
pub mod names {
    pub const CONFIG: &str = "config.toml";
    pub const CONFIG_ORIGINAL: &str = "config.original.toml";
    pub const REPORT: &str = "report.json";
    pub const REPORT_TEXT: &str = "report.txt";
    pub const ENSEMBLE_BIN: &str = "ensemble.bin";
    pub const ENSEMBLE_CSV: &str = "ensemble.csv";
    pub const ENERGY_BALANCE: &str = "energy_balance.json";
    pub const RELAXATION: &str = "relaxation.csv";
    pub const KINEMATIC_CSV: &str = "kinematic_field.csv";
    pub const KINEMATIC_JSON: &str = "kinematic_field.json";
    pub const D_SWEEP: &str = "d_sweep.json";
    pub const RESIDUALS_PLUS: &str = "residuals_lambda_plus.json";
    pub const RESIDUALS_MINUS: &str = "residuals_lambda_minus.json";
    pub const QM_REFERENCE: &str = "qm_reference.json";
    pub const EIGENPAIRS: &str = "eigenpairs.csv";
    pub const QM_FIELDS_CSV: &str = "qm_fields.csv";
    pub const QM_FIELDS_JSON: &str = "qm_fields.json";
    pub const HYDRO: &str = "hydrodynamics.json";
    pub const AUTOCORRELATION: &str = "autocorrelation.json";
    pub const STATIONARITY: &str = "stationarity.json";
    pub const FIELD_SAMPLES: &str = "field_samples.csv";
}

/// Result of one pipeline before the report is assembled.
pub struct PipelineOutput {
    pub rows: Vec<Row>,
    pub warnings: Vec<String>,
}

/// Checks that every section a pipeline needs is present and valid, so
/// nothing is written for a config that cannot run.
pub fn validate(cfg: &ExperimentConfig) -> Result<()> {
    let name = cfg.experiment.as_str();
    match name {
        SED_HARMONIC_GROUND => {
            let fs = require(&cfg.field, "field", name)?;
            let p = require(&cfg.particle, "particle", name)?;
            let grid = require(&cfg.time, "time", name)?;
            require(&cfg.ensemble, "ensemble", name)?;
            require(&cfg.analysis, "analysis", name)?;
            require(&cfg.coarse_grain, "coarse_grain", name)?.validate()?;
            require(&cfg.sweep, "sweep", name)?;
            fs.validate()?;
            p.validate()?;
            grid.validate()?;
            if p.potential.characteristic_frequency(p.mass).is_none() {
                return Err(Error::Config(format!("pipeline `{name}` needs a harmonic particle potential")));
            }
            let limit = std::f64::consts::TAU / (10.0 * fs.omega_cutoff);
            if grid.dt > limit {
                return Err(Error::StepSize(format!("time.dt = {} exceeds 2π/(10 ω_c) = {limit}", grid.dt)));
            }
        }
        OU_CALIBRATION => {
            require(&cfg.ou, "ou", name)?.validate()?;
            require(&cfg.time, "time", name)?.validate()?;
            require(&cfg.ensemble, "ensemble", name)?;
            require(&cfg.coarse_grain, "coarse_grain", name)?.validate()?;
            if let Some(grid) = require(&cfg.sweep, "sweep", name)?.time {
                grid.validate()?;
            }
        }
        SCHRODINGER_REFERENCE => {
            let s = require(&cfg.schrodinger, "schrodinger", name)?;
            s.grid.validate()?;
            s.hydro_grid.validate()?;
            s.ring_grid.validate()?;
        }
        FIELD_SYNTHESIS => {
            require(&cfg.field, "field", name)?.validate()?;
            require(&cfg.field_check, "field_check", name)?;
        }
        other => return Err(Error::UnknownPipeline(other.to_string())),
    }
    for key in required_tolerances(name) {
        cfg.tolerance(key)?;
    }
    Ok(())
}

fn required_tolerances(name: &str) -> &'static [&'static str] {
    match name {
        SED_HARMONIC_GROUND => &[
            "energy_rel",
            "variance_rel",
            "diffusion_rel",
            "balance_abs",
            "drift_pull",
            "normality_p",
            "flow_pull",
            "velocity_slope_rel",
            "branch_lambda",
            "branch_separation",
        ],
        OU_CALIBRATION => &[
            "flow_pull",
            "osmotic_pull",
            "access_pull",
            "identity_ratio",
            "plateau_pull",
            "plateau_decades",
            "branch_lambda",
            "branch_separation",
        ],
        SCHRODINGER_REFERENCE => &[
            "eigenvalue_rel",
            "orthonormality",
            "norm_drift",
            "stationary_overlap",
            "density_drift",
            "vq_ratio_abs",
            "ns_target",
            "ring_terms",
            "continuity_target",
        ],
        FIELD_SYNTHESIS => &["autocorrelation_pull", "cross_pull", "stationarity_pull", "normality_p"],
        _ => &[],
    }
}

pub fn run(cfg: &ExperimentConfig, dir: &Path) -> Result<PipelineOutput> {
    match cfg.experiment.as_str() {
        SED_HARMONIC_GROUND => sed_harmonic_ground(cfg, dir),
        OU_CALIBRATION => ou_calibration(cfg, dir),
        SCHRODINGER_REFERENCE => schrodinger_reference(cfg, dir),
        FIELD_SYNTHESIS => field_synthesis(cfg, dir),
        other => Err(Error::UnknownPipeline(other.to_string())),
    }
}

pub(crate) fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

pub(crate) fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn ensemble_path(dir: &Path) -> PathBuf {
    dir.join(names::ENSEMBLE_BIN)
}

fn write_ensemble(cfg: &ExperimentConfig, dir: &Path, ens: &TrajectoryEnsemble) -> Result<()> {
    if cfg.outputs.ensemble_binary {
        let mut w = create(dir, names::ENSEMBLE_BIN)?;
        ens.write_binary(&mut w)?;
        w.flush()?;
    }
    if cfg.outputs.ensemble_csv {
        let mut w = create(dir, names::ENSEMBLE_CSV)?;
        ens.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

/// Weighted least-squares slope of `y = s·x` through the origin over valid
/// bins, with its standard error.
pub fn slope_through_origin(centers: &[f64], values: &[Estimate], valid: &[bool]) -> (f64, f64) {
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for ((x, e), ok) in centers.iter().zip(values).zip(valid) {
        if !ok || !(e.se > 0.0) {
            continue;
        }
        let w = 1.0 / (e.se * e.se);
        sxy += w * x * e.mean;
        sxx += w * x * x;
    }
    (sxy / sxx, sxx.recip().sqrt())
}

/// Largest `|value − reference(x)| / se` over valid bins.
pub fn max_pull(centers: &[f64], values: &[Estimate], valid: &[bool], reference: impl Fn(f64) -> f64) -> f64 {
    centers
        .iter()
        .zip(values)
        .zip(valid)
        .filter(|(_, &ok)| ok)
        .map(|((&x, e), _)| ((e.mean - reference(x)) / e.se).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QmReference {
    pub energy: f64,
    pub position_variance: f64,
    pub diffusion: f64,
    pub omega: f64,
    pub x: Vec<f64>,
    pub rho: Vec<f64>,
}

fn qm_reference(p: &ParticleSpec, hbar: f64, grid: Option<&GridSpec>) -> Result<QmReference> {
    let omega = p
        .potential
        .characteristic_frequency(p.mass)
        .ok_or_else(|| Error::invalid("particle.potential", "no characteristic frequency"))?;
    let units = QuantumUnits { hbar, mass: p.mass };
    let length = (hbar / (p.mass * omega)).sqrt();
    let grid = grid.cloned().unwrap_or_else(|| GridSpec::new(-10.0 * length, 10.0 * length, 2001));
    let es = schrodinger::solve_stationary(&p.potential, &grid, units, 1)?;
    let ground = es.state(0);
    Ok(QmReference {
        energy: es.energies[0],
        position_variance: ground.position_variance(),
        diffusion: units.diffusion(),
        omega,
        x: grid.points(),
        rho: ground.rho(),
    })
}

fn sed_harmonic_ground(cfg: &ExperimentConfig, dir: &Path) -> Result<PipelineOutput> {
    let name = SED_HARMONIC_GROUND;
    let fs = require(&cfg.field, "field", name)?;
    let p = require(&cfg.particle, "particle", name)?;
    let grid = *require(&cfg.time, "time", name)?;
    let ens_cfg = require(&cfg.ensemble, "ensemble", name)?;
    let analysis = require(&cfg.analysis, "analysis", name)?;
    let cg = require(&cfg.coarse_grain, "coarse_grain", name)?;
    let sweep = require(&cfg.sweep, "sweep", name)?;
    let window = analysis.window;

    let ens = dynamics::integrate_ensemble(&EnsembleRequest {
        particle: p,
        field: Some(fs),
        initial: &ens_cfg.initial,
        grid,
        n_traj: ens_cfg.n_traj,
        master_seed: cfg.seeds.master_seed,
        record_stride: ens_cfg.record_stride,
        threads: ens_cfg.threads,
    })
    .map_err(|e| e.in_stage("sde_dynamics"))?;
    let mut warnings = ens.warnings.clone();
    write_ensemble(cfg, dir, &ens)?;

    let balance = dynamics::energy_balance(&ens, p, window).map_err(|e| e.in_stage("sde_dynamics"))?;
    warnings.extend(balance.warnings.iter().cloned());
    let curve = dynamics::relaxation_curve(&ens, p);
    let energy = curve.window_mean(window.0, window.1);
    let variance = ens.position_variance(window).map_err(|e| e.in_stage("sde_dynamics"))?;
    let last = ens.window_indices(window).end.saturating_sub(1);
    let snapshot: Vec<f64> = ens.valid().map(|t| t.x[last]).collect();

    let qm = qm_reference(p, fs.hbar, cfg.schrodinger.as_ref().map(|s| &s.grid)).map_err(|e| e.in_stage("schrodinger_ref"))?;
    let (_, normality_p) = stats::normal_chi_square(&snapshot, 0.0, qm.position_variance.sqrt(), analysis.normality_bins);

    let kin = |e: Error| e.in_stage("sqm_kinematics");
    let mut kf = kinematics::estimate_field(&ens, cg).map_err(kin)?;
    kf.scales = Some(ScaleSeparation::new(kf.spec.delta_t, Some(qm.omega), Some(fs.omega_cutoff)));
    let lags = kinematics::log_lags(sweep.min_lag, sweep.max_lag, sweep.n_lags);
    let d_sweep = kinematics::d_sweep(&ens, cg, &lags).map_err(kin)?;
    if let Some(flag) = &d_sweep.flag {
        warnings.push(format!("D(Δt) sweep: {flag}"));
    }
    let rho = kf.rho_values();
    let plus = kinematics::dynamics_residuals(&kf, &rho, p, 1).map_err(kin)?;
    let minus = kinematics::dynamics_residuals(&kf, &rho, p, -1).map_err(kin)?;
    let branch = kinematics::classify_branch(&kf, &rho, p).map_err(kin)?;
    drop(ens);

    let w = format!("window [{}, {}]", window.0, window.1);
    let mut rows = vec![
        Row::new(
            "mean_energy",
            (energy.0, Some(energy.1)),
            qm.energy,
            Check::Relative { tol: cfg.tolerance("energy_rel")? },
            format!("SED ensemble ⟨½mẋ²+V⟩, {w}"),
            "Schrödinger ground-state eigenvalue",
        ),
        Row::new(
            "position_variance",
            (variance.0, Some(variance.1)),
            qm.position_variance,
            Check::Relative { tol: cfg.tolerance("variance_rel")? },
            format!("SED ensemble ⟨x²⟩−⟨x⟩², {w}"),
            "Schrödinger ground-state ⟨x²⟩",
        ),
        Row::new(
            "diffusion_coefficient",
            (kf.diffusion.pooled.mean, Some(kf.diffusion.pooled.se)),
            qm.diffusion,
            Check::Relative { tol: cfg.tolerance("diffusion_rel")? },
            format!("pooled D at Δt = {}", kf.spec.delta_t),
            "ħ/2m",
        ),
        Row::new(
            "energy_balance",
            (balance.relative_imbalance, Some(balance.imbalance_se)),
            0.0,
            Check::Absolute { tol: cfg.tolerance("balance_abs")? },
            format!("(⟨eE·ẋ⟩ − mτ⟨ẍ²⟩)/mτ⟨ẍ²⟩, {w}"),
            "stationarity: zero net power",
        ),
        Row::new(
            "energy_drift",
            (balance.energy_drift, Some(balance.energy_drift_se)),
            0.0,
            Check::Pull { max: cfg.tolerance("drift_pull")? },
            "second-half minus first-half mean energy",
            "stationarity: no drift",
        ),
        Row::new(
            "position_normality_p",
            (normality_p, None),
            0.0,
            Check::AtLeast { limit: cfg.tolerance("normality_p")? },
            "chi-square p-value of x at window end, one sample per trajectory",
            "Gaussian with the ground-state variance",
        ),
        Row::new(
            "flow_velocity_max_pull",
            (max_pull(&kf.centers, &kf.v, &kf.valid, |_| 0.0), None),
            0.0,
            Check::AtMost { limit: cfg.tolerance("flow_pull")? },
            "max |v|/se over valid bins",
            "ground state: v = 0",
        ),
    ];
    let slope_tol = cfg.tolerance("velocity_slope_rel")?;
    let (su, su_err) = slope_through_origin(&kf.centers, &kf.u, &kf.valid);
    let (sa, sa_err) = slope_through_origin(&kf.centers, &kf.va, &kf.valid);
    rows.push(Row::new(
        "osmotic_velocity_slope",
        (su, Some(su_err)),
        -2.0 * qm.diffusion * p.mass * qm.omega / fs.hbar,
        Check::Relative { tol: slope_tol },
        "fit u = s·x over valid bins",
        "ground state: u = D ρ′/ρ",
    ));
    rows.push(Row::new(
        "access_velocity_slope",
        (sa, Some(sa_err)),
        2.0 * qm.diffusion * p.mass * qm.omega / fs.hbar,
        Check::Relative { tol: slope_tol },
        "fit v_a = s·x over valid bins",
        "ground state: v_a = v − u",
    ));
    rows.push(Row::new(
        "branch_lambda",
        (branch.lambda as f64, None),
        1.0,
        Check::Absolute { tol: cfg.tolerance("branch_lambda")? },
        "smaller normalized residual of the first stochastic Newton equation",
        "quantum branch",
    ));
    rows.push(Row::new(
        "branch_separation",
        (branch.separation, None),
        0.0,
        Check::AtLeast { limit: cfg.tolerance("branch_separation")? },
        "rejected / accepted normalized residual",
        "clean discrimination",
    ));

    write_json(dir, names::ENERGY_BALANCE, &balance)?;
    {
        let mut w = create(dir, names::RELAXATION)?;
        writeln!(w, "t,mean_energy,std_error")?;
        for ((t, e), s) in curve.times.iter().zip(&curve.mean_energy).zip(&curve.std_error) {
            writeln!(w, "{t:e},{e:e},{s:e}")?;
        }
        w.flush()?;
    }
    write_kinematics(dir, &kf)?;
    write_json(dir, names::D_SWEEP, &d_sweep)?;
    write_json(dir, names::RESIDUALS_PLUS, &plus)?;
    write_json(dir, names::RESIDUALS_MINUS, &minus)?;
    write_json(dir, names::QM_REFERENCE, &qm)?;
    Ok(PipelineOutput { rows, warnings })
}

fn write_kinematics(dir: &Path, kf: &KinematicField) -> Result<()> {
    let mut w = create(dir, names::KINEMATIC_CSV)?;
    kf.write_csv(&mut w)?;
    w.flush()?;
    write_json(dir, names::KINEMATIC_JSON, kf)
}

fn ou_calibration(cfg: &ExperimentConfig, dir: &Path) -> Result<PipelineOutput> {
    let name = OU_CALIBRATION;
    let ou = require(&cfg.ou, "ou", name)?;
    let grid = *require(&cfg.time, "time", name)?;
    let ens_cfg = require(&cfg.ensemble, "ensemble", name)?;
    let cg = require(&cfg.coarse_grain, "coarse_grain", name)?;
    let sweep = require(&cfg.sweep, "sweep", name)?;
    let mass = cfg.particle.as_ref().map_or(1.0, |p| p.mass);

    let ens = oracle::ou_ensemble(ou, grid, ens_cfg.n_traj, cfg.seeds.master_seed, ens_cfg.record_stride)
        .map_err(|e| e.in_stage("oracle"))?;
    write_ensemble(cfg, dir, &ens)?;

    let kin = |e: Error| e.in_stage("sqm_kinematics");
    let kf = kinematics::estimate_field(&ens, cg).map_err(kin)?;
    let lags = kinematics::log_lags(sweep.min_lag, sweep.max_lag, sweep.n_lags);
    let d_sweep = match sweep.time {
        Some(sweep_grid) => {
            let seed = rng::derive_seed(cfg.seeds.master_seed, SWEEP_ENSEMBLE_INDEX);
            let n = sweep.n_traj.unwrap_or(ens_cfg.n_traj);
            let fine = oracle::ou_ensemble(ou, sweep_grid, n, seed, 1).map_err(|e| e.in_stage("oracle"))?;
            let fine_cg = CoarseGrainSpec {
                t_window: (sweep_grid.t0, sweep_grid.t_end()),
                ..cg.clone()
            };
            kinematics::d_sweep(&fine, &fine_cg, &lags).map_err(kin)?
        }
        None => kinematics::d_sweep(&ens, cg, &lags).map_err(kin)?,
    };
    let brownian = ParticleSpec::new(mass, 0.0, ou.brownian_branch_potential(mass));
    let rho = kf.rho_values();
    let plus = kinematics::dynamics_residuals(&kf, &rho, &brownian, 1).map_err(kin)?;
    let minus = kinematics::dynamics_residuals(&kf, &rho, &brownian, -1).map_err(kin)?;
    let branch = kinematics::classify_branch(&kf, &rho, &brownian).map_err(kin)?;

    let sigma2 = ou.stationary_variance();
    let d0 = ou.diffusion;
    let identity = kf
        .va
        .iter()
        .zip(&kf.va_direct)
        .zip(&kf.valid)
        .filter(|(_, &ok)| ok)
        .map(|((a, b), _)| (a.mean - b.mean).abs() / a.se.hypot(b.se))
        .fold(0.0, f64::max);
    let (plateau_d, plateau_decades) = d_sweep
        .plateau
        .as_ref()
        .map_or((Estimate::INVALID, f64::NAN), |p| (p.d, p.decades()));

    let rows = vec![
        Row::new(
            "flow_velocity_max_pull",
            (max_pull(&kf.centers, &kf.v, &kf.valid, |_| 0.0), None),
            0.0,
            Check::AtMost { limit: cfg.tolerance("flow_pull")? },
            "max |v|/se over valid bins",
            "OU equilibrium: v = 0",
        ),
        Row::new(
            "osmotic_velocity_max_pull",
            (max_pull(&kf.centers, &kf.u, &kf.valid, |x| -d0 * x / sigma2), None),
            0.0,
            Check::AtMost { limit: cfg.tolerance("osmotic_pull")? },
            "max |u + D₀x/σ²|/se over valid bins",
            "OU equilibrium: u = −D₀x/σ²",
        ),
        Row::new(
            "access_velocity_max_pull",
            (max_pull(&kf.centers, &kf.va_direct, &kf.valid, |x| d0 * x / sigma2), None),
            0.0,
            Check::AtMost { limit: cfg.tolerance("access_pull")? },
            "max |v_a − D₀x/σ²|/se, backward difference",
            "OU equilibrium: v_a = −u",
        ),
        Row::new(
            "access_velocity_identity",
            (identity, None),
            0.0,
            Check::AtMost { limit: cfg.tolerance("identity_ratio")? },
            "max |(v − u) − v_a| over combined se",
            "three-point identity",
        ),
        Row::new(
            "diffusion_plateau",
            (plateau_d.mean, Some(plateau_d.se)),
            d0,
            Check::Pull { max: cfg.tolerance("plateau_pull")? },
            "weighted D over the widest plateau of the Δt sweep",
            "OU diffusion D₀",
        ),
        Row::new(
            "diffusion_plateau_decades",
            (plateau_decades, None),
            0.0,
            Check::AtLeast { limit: cfg.tolerance("plateau_decades")? },
            "log10 of the plateau Δt span",
            "scale separation",
        ),
        Row::new(
            "branch_lambda",
            (branch.lambda as f64, None),
            -1.0,
            Check::Absolute { tol: cfg.tolerance("branch_lambda")? },
            "smaller normalized residual with the Brownian-branch force",
            "Brownian branch",
        ),
        Row::new(
            "branch_separation",
            (branch.separation, None),
            0.0,
            Check::AtLeast { limit: cfg.tolerance("branch_separation")? },
            "rejected / accepted normalized residual",
            "clean discrimination",
        ),
    ];

    write_kinematics(dir, &kf)?;
    write_json(dir, names::D_SWEEP, &d_sweep)?;
    write_json(dir, names::RESIDUALS_PLUS, &plus)?;
    write_json(dir, names::RESIDUALS_MINUS, &minus)?;
    let mut warnings = Vec::new();
    if let Some(flag) = &d_sweep.flag {
        warnings.push(format!("D(Δt) sweep: {flag}"));
    }
    Ok(PipelineOutput { rows, warnings })
}

#[derive(Debug, Serialize)]
struct HydroSummary {
    vq_convergence: (f64, f64, f64),
    /// Max form difference and its 2h-stencil counterpart.
    ground_vq: (f64, f64),
    ns_ground: schrodinger::NavierStokesResidual,
    ns_coherent: Vec<(f64, f64, f64)>,
    ring_terms: schrodinger::TermMaxima,
    continuity: schrodinger::ContinuityResidual,
}

/// Max `|V_Q,velocity − V_Q,density|` on points shared by a grid and its
/// halved refinement, within `|x| ≤ extent`. Returns `(coarse, fine, ratio)`.
pub fn vq_convergence(
    pot: &Potential,
    grid: &GridSpec,
    units: QuantumUnits,
    state: usize,
    extent: f64,
) -> Result<(f64, f64, f64)> {
    let fine_grid = GridSpec {
        n_points: 2 * grid.n_points - 1,
        ..grid.clone()
    };
    let error_on = |g: &GridSpec, stride: usize| -> Result<f64> {
        let s = schrodinger::solve_stationary(pot, g, units, state + 1)?.state(state);
        let q = schrodinger::quantum_potential(&s);
        Ok((0..g.n_points)
            .step_by(stride)
            .filter(|&i| g.x(i).abs() <= extent && q.mask[i])
            .map(|i| (q.velocity_form[i] - q.density_form[i]).abs())
            .fold(0.0, f64::max))
    };
    let coarse = error_on(grid, 1)?;
    let fine = error_on(&fine_grid, 2)?;
    Ok((coarse, fine, coarse / fine))
}

fn schrodinger_reference(cfg: &ExperimentConfig, dir: &Path) -> Result<PipelineOutput> {
    let s = require(&cfg.schrodinger, "schrodinger", SCHRODINGER_REFERENCE)?;
    let stage = |e: Error| e.in_stage("schrodinger_ref");
    let units = s.units;
    let pot = Potential::Harmonic { omega: s.omega };
    let quantum = units.hbar * s.omega;

    let es = schrodinger::solve_stationary(&pot, &s.grid, units, s.n_states).map_err(stage)?;
    let mut rows = Vec::new();
    let eig_tol = cfg.tolerance("eigenvalue_rel")?;
    for (n, e) in es.energies.iter().enumerate() {
        rows.push(Row::new(
            format!("eigenvalue_{n}"),
            (*e, None),
            (n as f64 + 0.5) * quantum,
            Check::Relative { tol: eig_tol },
            "finite-difference Hamiltonian",
            "(n + ½)ħω",
        ));
    }
    rows.push(Row::new(
        "gram_error",
        (es.gram_error, None),
        0.0,
        Check::AtMost { limit: cfg.tolerance("orthonormality")? },
        "max |G − I| of the eigenvectors",
        "orthonormal basis",
    ));

    let ground = es.state(0);
    let evolved = schrodinger::evolve(&ground, s.evolution_dt, s.evolution_steps).map_err(stage)?;
    let density_drift = ground
        .rho()
        .iter()
        .zip(evolved.rho())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let steps = s.evolution_steps;
    rows.push(Row::new(
        "norm_drift",
        ((evolved.norm() - 1.0).abs(), None),
        0.0,
        Check::AtMost { limit: cfg.tolerance("norm_drift")? },
        format!("|∫ρ − 1| after {steps} Crank–Nicolson steps"),
        "unitary evolution",
    ));
    rows.push(Row::new(
        "stationary_overlap",
        ((1.0 - ground.overlap(&evolved).norm()).abs(), None),
        0.0,
        Check::AtMost { limit: cfg.tolerance("stationary_overlap")? },
        format!("1 − |⟨ψ₀|ψ(t)⟩| after {steps} steps"),
        "global phase only",
    ));
    rows.push(Row::new(
        "density_drift",
        (density_drift, None),
        0.0,
        Check::AtMost { limit: cfg.tolerance("density_drift")? },
        format!("sup |ρ(t) − ρ(0)| after {steps} steps"),
        "stationary density",
    ));

    let hg = &s.hydro_grid;
    let conv = vq_convergence(&pot, hg, units, 0, s.convergence_extent).map_err(stage)?;
    rows.push(Row::new(
        "vq_convergence_ratio",
        (conv.2, None),
        4.0,
        Check::Absolute { tol: cfg.tolerance("vq_ratio_abs")? },
        "V_Q form difference, grid vs halved grid",
        "second-order truncation",
    ));
    let hydro_states = schrodinger::solve_stationary(&pot, hg, units, 1).map_err(stage)?;
    let ground_vq = schrodinger::quantum_potential(&hydro_states.state(0));

    let ns_target = cfg.tolerance("ns_target")?;
    let ground_h = hydro_states.state(0);
    let ns_ground = schrodinger::navier_stokes_residual(&ground_h, None);
    rows.push(Row::new(
        "ns_residual_ground",
        (ns_ground.normalized, None),
        ns_ground.truncation_bound,
        Check::WithinBound { target: ns_target },
        "normalized access-velocity equation residual",
        "2h-stencil truncation bound",
    ));

    let dt = s.evolution_dt;
    let mut state = schrodinger::coherent_state(hg, units, s.omega, s.coherent_shift).map_err(stage)?;
    let mut ns_coherent = Vec::new();
    let mut continuity = None;
    let mut times = s.sample_times.clone();
    times.sort_by(f64::total_cmp);
    for &t in &times {
        let to_prev = ((t - dt - state.time) / dt).round().max(0.0) as usize;
        let prev = schrodinger::evolve(&state, dt, to_prev).map_err(stage)?;
        let mid = schrodinger::evolve(&prev, dt, 1).map_err(stage)?;
        let next = schrodinger::evolve(&mid, dt, 1).map_err(stage)?;
        let r = schrodinger::navier_stokes_residual(&mid, Some((&prev, &next)));
        rows.push(Row::new(
            format!("ns_residual_coherent_t{t}"),
            (r.normalized, None),
            r.truncation_bound,
            Check::WithinBound { target: ns_target },
            format!("coherent state at t = {:.6}", mid.time),
            "2h-stencil truncation bound",
        ));
        ns_coherent.push((mid.time, r.normalized, r.truncation_bound));
        if continuity.is_none() {
            continuity = Some(schrodinger::continuity_residual(&prev, &mid, &next));
        }
        state = next;
    }
    let continuity = continuity.ok_or_else(|| Error::Config("schrodinger.sample_times is empty".into()))?;
    rows.push(Row::new(
        "continuity_residual",
        (continuity.normalized, None),
        continuity.truncation_bound,
        Check::WithinBound { target: cfg.tolerance("continuity_target")? },
        "normalized ∂ρ/∂t + (ρv)′ on the coherent state",
        "2h-stencil truncation bound",
    ));

    let ring = schrodinger::plane_wave(&s.ring_grid, units, s.ring_winding).map_err(stage)?;
    let ring_ns = schrodinger::navier_stokes_residual(&ring, None);
    let t = ring_ns.terms;
    rows.push(Row::new(
        "ring_nonlinear_terms",
        (t.advection.max(t.diffusion).max(t.quantum_force).max(t.external_force), None),
        0.0,
        Check::AtMost { limit: cfg.tolerance("ring_terms")? },
        "largest advection, diffusion and potential term",
        "constant density: all vanish",
    ));

    {
        let mut w = create(dir, names::EIGENPAIRS)?;
        es.write_csv(&mut w)?;
        w.flush()?;
        let mut w = create(dir, names::QM_FIELDS_CSV)?;
        ground_h.write_fields_csv(&mut w)?;
        w.flush()?;
    }
    write_json(dir, names::QM_FIELDS_JSON, &ground_h.metadata())?;
    write_json(
        dir,
        names::HYDRO,
        &HydroSummary {
            vq_convergence: conv,
            ground_vq: (ground_vq.max_difference, ground_vq.truncation_bound),
            ns_ground,
            ns_coherent,
            ring_terms: ring_ns.terms,
            continuity,
        },
    )?;
    Ok(PipelineOutput { rows, warnings: Vec::new() })
}

fn field_synthesis(cfg: &ExperimentConfig, dir: &Path) -> Result<PipelineOutput> {
    let fs: &FieldSpec = require(&cfg.field, "field", FIELD_SYNTHESIS)?;
    let fc = require(&cfg.field_check, "field_check", FIELD_SYNTHESIS)?;
    let stage = |e: Error| e.in_stage("zpf_field");
    let ensemble = field::make_ensemble(fs, cfg.seeds.master_seed, fc.n_realizations).map_err(stage)?;
    let auto = field::autocorrelation_check(&ensemble, fc.t_ref, &fc.lags).map_err(stage)?;
    let stat = field::stationarity_check(&ensemble, fc.stationarity_lag, &fc.offsets).map_err(stage)?;

    let pull = cfg.tolerance("autocorrelation_pull")?;
    let mut rows = Vec::new();
    let (var, var_se) = field::cross_covariance(&ensemble, 0, 0, fc.t_ref, 0.0);
    rows.push(Row::new(
        "variance_lag0",
        (var, Some(var_se)),
        fs.variance(),
        Check::Pull { max: pull },
        format!("{} realizations at t = {}", ensemble.len(), fc.t_ref),
        "closed-form band integral of S(ω)",
    ));
    for r in &auto.rows {
        rows.push(Row::new(
            format!("autocovariance_lag{}", r.lag),
            (r.empirical, Some(r.std_error)),
            r.analytic,
            Check::Pull { max: pull },
            "ensemble covariance",
            "quadrature of the truncated spectrum",
        ));
    }
    if fs.components >= 2 {
        let (c, se) = field::cross_covariance(&ensemble, 0, 1, fc.t_ref, 0.0);
        rows.push(Row::new(
            "cross_component",
            (c, Some(se)),
            0.0,
            Check::Pull { max: cfg.tolerance("cross_pull")? },
            "⟨E₁E₂⟩ at equal times",
            "independent components",
        ));
    }
    rows.push(Row::new(
        "stationarity_max_pull",
        (stat.max_pairwise_z, None),
        0.0,
        Check::AtMost { limit: cfg.tolerance("stationarity_pull")? },
        format!("covariance at lag {} over {} offsets", stat.lag, stat.rows.len()),
        "time-translation invariance",
    ));
    let samples: Vec<f64> = ensemble.iter().map(|fr| fr.eval_component(0, fc.t_ref)).collect();
    let (_, p) = stats::normal_chi_square(&samples, 0.0, fs.variance().sqrt(), fc.normality_bins);
    rows.push(Row::new(
        "normality_p",
        (p, None),
        0.0,
        Check::AtLeast { limit: cfg.tolerance("normality_p")? },
        "chi-square p-value of E₁(t_ref)",
        "Gaussian marginal",
    ));

    write_json(dir, names::AUTOCORRELATION, &auto)?;
    write_json(dir, names::STATIONARITY, &stat)?;
    if cfg.outputs.field_csv {
        let period = std::f64::consts::TAU / fs.omega_cutoff;
        let times: Vec<f64> = (0..1000).map(|j| fc.t_ref + j as f64 * period / 20.0).collect();
        let mut w = create(dir, names::FIELD_SAMPLES)?;
        ensemble[0].write_csv(&times, &mut w)?;
        w.flush()?;
    }
    Ok(PipelineOutput { rows, warnings: Vec::new() })
}
