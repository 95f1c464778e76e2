//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails. Thresholds are pinned here, not read
//! from the configs, so editing a config cannot loosen them.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use sedkit::harness::config::ExperimentConfig;
use sedkit::harness::constants::{transition_time, ConstantsFile};
use sedkit::harness::report::ComparisonReport;
use sedkit::harness::{self, pipelines};
use sedkit::potential::Potential;

const ENERGY_REL: f64 = 0.05;
const VARIANCE_REL: f64 = 0.05;
const DIFFUSION_REL: f64 = 0.10;
const BALANCE_MAX: f64 = 0.10;
const MIN_TRAJECTORIES: usize = 500;
const MIN_RELAXATION_TIMES: f64 = 5.0;
const BRANCH_SEPARATION: f64 = 5.0;
const MAX_PULL: f64 = 3.0;
const PLATEAU_DECADES: f64 = 1.0;
const EIGEN_REL: f64 = 1e-4;
const EIGEN_STATES: usize = 6;
const NORM_DRIFT_PER_1000: f64 = 1e-6;
const VQ_RATIO: (f64, f64) = (4.0, 0.5);
const HYDRO_TARGET: f64 = 1e-3;
const HYDRO_POINTS: usize = 1000;
const COHERENT_TIMES: usize = 3;
/// "Exactly zero" for the ring state, read as zero up to roundoff.
const RING_ROUNDOFF: f64 = 1e-9;
const MIN_FIELD_DRAWS: usize = 10_000;
const TRANSITION_RANGE: (f64, f64) = (1e-19, 1e-18);
const THREADS_N: usize = 4;

type Checks = Vec<(String, bool)>;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&configs().join(name)).expect("config").0
}

fn run(cfg: &ExperimentConfig, root: &Path) -> Result<(ComparisonReport, PathBuf), String> {
    harness::run_config(cfg, None, Some(root))
        .map(|o| (o.report, o.dir))
        .map_err(|e| e.to_string())
}

fn value(report: &ComparisonReport, name: &str) -> Result<f64, String> {
    report
        .row(name)
        .map(|r| r.value)
        .ok_or_else(|| format!("report lacks row `{name}`"))
}

fn check(checks: &mut Checks, label: String, ok: bool) {
    checks.push((label, ok));
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn sed_ground(cfg: &ExperimentConfig, sed: &ComparisonReport) -> Result<Checks, String> {
    let mut c = Checks::new();
    let f = cfg.field.as_ref().ok_or("no field")?;
    let p = cfg.particle.as_ref().ok_or("no particle")?;
    let ens = cfg.ensemble.as_ref().ok_or("no ensemble")?;
    let window = cfg.analysis.as_ref().ok_or("no analysis")?.window;
    let units = f.hbar == 1.0 && p.mass == 1.0 && p.potential == Potential::Harmonic { omega: 1.0 } && p.tau == 1e-3;
    check(&mut c, "units ħ=m=ω₀=1, τ=1e-3".into(), units);
    check(&mut c, format!("{} trajectories", ens.n_traj), ens.n_traj >= MIN_TRAJECTORIES);
    let relax = 1.0 / p.tau;
    check(
        &mut c,
        format!("window starts after {:.1} relaxation times", window.0 / relax),
        window.0 >= MIN_RELAXATION_TIMES * relax,
    );
    let e = value(sed, "mean_energy")?;
    check(&mut c, format!("energy {e:.4}"), rel(e, 0.5) <= ENERGY_REL);
    let v = value(sed, "position_variance")?;
    check(&mut c, format!("variance {v:.4}"), rel(v, 0.5) <= VARIANCE_REL);
    let d = value(sed, "diffusion_coefficient")?;
    check(&mut c, format!("D {d:.4}"), rel(d, 0.5) <= DIFFUSION_REL);
    Ok(c)
}

fn energy_balance(sed: &ComparisonReport) -> Result<Checks, String> {
    let b = value(sed, "energy_balance")?;
    Ok(vec![(format!("relative imbalance {b:.4}"), b.abs() <= BALANCE_MAX)])
}

fn branches(sed: &ComparisonReport, ou: &ComparisonReport) -> Result<Checks, String> {
    let mut c = Checks::new();
    for (name, rep, expected) in [("OU", ou, -1.0), ("SED", sed, 1.0)] {
        let lambda = value(rep, "branch_lambda")?;
        check(&mut c, format!("{name} λ={lambda:+}"), lambda == expected);
        let sep = value(rep, "branch_separation")?;
        check(&mut c, format!("{name} separation {sep:.2}"), sep >= BRANCH_SEPARATION);
    }
    Ok(c)
}

fn calibration(ou: &ComparisonReport) -> Result<Checks, String> {
    let mut c = Checks::new();
    let v = value(ou, "flow_velocity_max_pull")?;
    check(&mut c, format!("v max pull {v:.2}"), v <= MAX_PULL);
    let u = value(ou, "osmotic_velocity_max_pull")?;
    check(&mut c, format!("u max pull {u:.2}"), u <= MAX_PULL);
    let row = ou.row("diffusion_plateau").ok_or("no plateau row")?;
    let pull = (row.value - row.reference) / row.error.unwrap_or(f64::NAN);
    check(&mut c, format!("plateau D pull {pull:.2}"), pull.abs() <= MAX_PULL);
    let dec = value(ou, "diffusion_plateau_decades")?;
    check(&mut c, format!("plateau {dec:.2} decades"), dec >= PLATEAU_DECADES);
    Ok(c)
}

fn schrodinger(cfg: &ExperimentConfig, rep: &ComparisonReport) -> Result<Checks, String> {
    let mut c = Checks::new();
    let s = cfg.schrodinger.as_ref().ok_or("no schrodinger section")?;
    let quantum = s.units.hbar * s.omega;
    let mut worst: f64 = 0.0;
    for n in 0..EIGEN_STATES {
        let e = value(rep, &format!("eigenvalue_{n}"))?;
        worst = worst.max(rel(e, (n as f64 + 0.5) * quantum));
    }
    check(&mut c, format!("E_0..E_5 worst rel {worst:.1e}"), worst <= EIGEN_REL);
    let drift = value(rep, "norm_drift")?;
    let allowed = NORM_DRIFT_PER_1000 * s.evolution_steps as f64 / 1000.0;
    check(&mut c, format!("norm drift {drift:.1e} over {} steps", s.evolution_steps), drift <= allowed);
    let ratio = value(rep, "vq_convergence_ratio")?;
    check(&mut c, format!("V_Q halving ratio {ratio:.3}"), (ratio - VQ_RATIO.0).abs() <= VQ_RATIO.1);
    Ok(c)
}

fn hydrodynamics(cfg: &ExperimentConfig, rep: &ComparisonReport) -> Result<Checks, String> {
    let mut c = Checks::new();
    let s = cfg.schrodinger.as_ref().ok_or("no schrodinger section")?;
    check(&mut c, format!("{}-point grid", s.hydro_grid.n_points), s.hydro_grid.n_points == HYDRO_POINTS);
    let coherent: Vec<_> = rep
        .rows
        .iter()
        .filter(|r| r.observable.starts_with("ns_residual_coherent"))
        .collect();
    check(&mut c, format!("{} coherent times", coherent.len()), coherent.len() == COHERENT_TIMES);
    let ground = rep.row("ns_residual_ground").ok_or("no ground row")?;
    for r in std::iter::once(ground).chain(coherent) {
        check(
            &mut c,
            format!("{} {:.1e} (bound {:.1e})", r.observable, r.value, r.reference),
            r.value <= r.reference && r.value <= HYDRO_TARGET,
        );
    }
    let ring = value(rep, "ring_nonlinear_terms")?;
    check(&mut c, format!("ring terms {ring:.1e}"), ring <= RING_ROUNDOFF);
    Ok(c)
}

fn field(cfg: &ExperimentConfig, rep: &ComparisonReport) -> Result<Checks, String> {
    let mut c = Checks::new();
    let f = cfg.field.as_ref().ok_or("no field")?;
    let fc = cfg.field_check.as_ref().ok_or("no field_check")?;
    check(&mut c, format!("{} draws", fc.n_realizations), fc.n_realizations >= MIN_FIELD_DRAWS);
    check(&mut c, "full band".into(), f.omega_min == 0.0);
    let closed_form = f.hbar * f.omega_cutoff.powi(4) / (6.0 * PI * f.c.powi(3));
    let row = rep.row("variance_lag0").ok_or("no variance row")?;
    let pull = (row.value - closed_form) / row.error.unwrap_or(f64::NAN);
    check(&mut c, format!("lag-0 variance pull {pull:.2}"), pull.abs() <= MAX_PULL);
    let cross = rep.row("cross_component").ok_or("no cross row")?;
    let cz = cross.value / cross.error.unwrap_or(f64::NAN);
    check(&mut c, format!("cross-component pull {cz:.2}"), cz.abs() <= MAX_PULL);
    let st = value(rep, "stationarity_max_pull")?;
    check(&mut c, format!("stationarity max pull {st:.2}"), st <= MAX_PULL);
    Ok(c)
}

fn transition() -> Result<Checks, String> {
    let pc = ConstantsFile::bundled().for_particle("electron").map_err(|e| e.to_string())?;
    let t = transition_time(&pc);
    Ok(vec![(
        format!("electron (αω_C)⁻¹ = {t:.3e} s"),
        (TRANSITION_RANGE.0..TRANSITION_RANGE.1).contains(&t),
    )])
}

fn ensemble_hash(dir: &Path) -> Result<String, String> {
    let path = pipelines::ensemble_path(dir);
    let bytes = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let hash = harness::sha256_hex(&bytes);
    drop(bytes);
    std::fs::remove_file(&path).map_err(|e| e.to_string())?;
    Ok(hash)
}

fn reproducibility(cfg: &ExperimentConfig, root: &Path, reference: &str) -> Result<Checks, String> {
    let mut c = Checks::new();
    let mut hashes = vec![("default pool".to_string(), reference.to_string())];
    for (label, threads) in [("1 thread", 1), ("N threads", THREADS_N), ("N threads again", THREADS_N)] {
        let mut cfg = cfg.clone();
        let ens = cfg.ensemble.as_mut().ok_or("no ensemble")?;
        ens.threads = threads;
        cfg.outputs.directory = format!("repro_{}_{}", threads, hashes.len());
        let (_, dir) = run(&cfg, root)?;
        hashes.push((label.to_string(), ensemble_hash(&dir)?));
    }
    for (label, h) in &hashes[1..] {
        check(&mut c, format!("{label} sha256 {}", &h[..12]), *h == hashes[0].1);
    }
    Ok(c)
}

fn main() {
    let root = tempfile::tempdir().expect("tempdir");
    let sed_cfg = load("sed_harmonic_ground.toml");
    let ou_cfg = load("ou_calibration.toml");
    let qm_cfg = load("schrodinger_reference.toml");
    let field_cfg = load("field_synthesis.toml");

    let sed = run(&sed_cfg, root.path());
    let sed_hash = sed.as_ref().map_err(Clone::clone).and_then(|(_, dir)| ensemble_hash(dir));
    let ou = run(&ou_cfg, root.path());
    let qm = run(&qm_cfg, root.path());
    let fs = run(&field_cfg, root.path());

    let results: Vec<(&str, Result<Checks, String>)> = vec![
        ("SED ground state against the quantum reference", sed.as_ref().map_err(Clone::clone).and_then(|(r, _)| sed_ground(&sed_cfg, r))),
        ("energy balance on the stationary window", sed.as_ref().map_err(Clone::clone).and_then(|(r, _)| energy_balance(r))),
        (
            "branch discrimination",
            match (&sed, &ou) {
                (Ok((s, _)), Ok((o, _))) => branches(s, o),
                (Err(e), _) | (_, Err(e)) => Err(e.clone()),
            },
        ),
        ("estimator calibration on the OU oracle", ou.as_ref().map_err(Clone::clone).and_then(|(r, _)| calibration(r))),
        ("Schrödinger reference solver", qm.as_ref().map_err(Clone::clone).and_then(|(r, _)| schrodinger(&qm_cfg, r))),
        ("hydrodynamic form", qm.as_ref().map_err(Clone::clone).and_then(|(r, _)| hydrodynamics(&qm_cfg, r))),
        ("zero-point field synthesis", fs.as_ref().map_err(Clone::clone).and_then(|(r, _)| field(&field_cfg, r))),
        ("transition-time calculator", transition()),
        (
            "bit-identical ensembles across thread counts",
            sed_hash.and_then(|h| reproducibility(&sed_cfg, root.path(), &h)),
        ),
    ];

    let mut failed = 0;
    for (i, (title, result)) in results.iter().enumerate() {
        let (pass, detail) = match result {
            Ok(checks) => (
                checks.iter().all(|(_, ok)| *ok),
                checks
                    .iter()
                    .map(|(label, ok)| format!("{label} {}", if *ok { "ok" } else { "FAIL" }))
                    .collect::<Vec<_>>()
                    .join("; "),
            ),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!("criterion {} {}: {} | {detail}", i + 1, if pass { "PASS" } else { "FAIL" }, title);
    }
    println!("acceptance: {} of {} criteria pass", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
