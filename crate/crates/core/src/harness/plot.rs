//! Plot-ready data: whitespace-separated `.dat` tables with a gnuplot script each.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

use super::config::ExperimentConfig;
use super::pipelines::{self, create, names};
use crate::dynamics::TrajectoryEnsemble;
use crate::error::{Error, Result};
use crate::field::AutocorrelationReport;
use crate::kinematics::{DSweep, KinematicField};

fn required(experiment: &str) -> &'static [&'static str] {
    match experiment {
        pipelines::SED_HARMONIC_GROUND => &[
            names::CONFIG,
            names::KINEMATIC_JSON,
            names::QM_REFERENCE,
            names::RELAXATION,
            names::D_SWEEP,
            names::ENSEMBLE_BIN,
        ],
        pipelines::OU_CALIBRATION => &[names::CONFIG, names::KINEMATIC_JSON, names::D_SWEEP],
        pipelines::SCHRODINGER_REFERENCE => &[names::CONFIG, names::QM_FIELDS_CSV],
        pipelines::FIELD_SYNTHESIS => &[names::CONFIG, names::AUTOCORRELATION],
        _ => &[names::CONFIG],
    }
}

fn read_json<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(dir.join(name))?))?)
}

fn script(dir: &Path, stem: &str, title: &str, xlabel: &str, plot: &str) -> Result<()> {
    let mut w = create(dir, &format!("{stem}.gp"))?;
    writeln!(w, "set title '{title}'")?;
    writeln!(w, "set xlabel '{xlabel}'")?;
    writeln!(w, "set key top right")?;
    writeln!(w, "plot {plot}")?;
    w.flush()?;
    Ok(())
}

/// Linear interpolation of `(xs, ys)` at `x`; zero outside the table.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    match xs.iter().position(|&xi| xi >= x) {
        Some(0) | None => 0.0,
        Some(i) => {
            let s = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
            ys[i - 1] + s * (ys[i] - ys[i - 1])
        }
    }
}

fn density_overlay(dir: &Path) -> Result<PathBuf> {
    let kf: KinematicField = read_json(dir, names::KINEMATIC_JSON)?;
    let qm: pipelines::QmReference = read_json(dir, names::QM_REFERENCE)?;
    let mut w = create(dir, "density_overlay.dat")?;
    writeln!(w, "# x rho_sed rho_sed_err rho_qm")?;
    for (x, r) in kf.centers.iter().zip(&kf.rho) {
        writeln!(w, "{x:e} {:e} {:e} {:e}", r.mean, r.se, interpolate(&qm.x, &qm.rho, *x))?;
    }
    w.flush()?;
    script(
        dir,
        "density_overlay",
        "position density",
        "x",
        "'density_overlay.dat' u 1:2:3 w yerrorbars t 'SED', '' u 1:4 w l t '|ψ₀|²'",
    )?;
    Ok(dir.join("density_overlay.dat"))
}

fn relaxation(dir: &Path) -> Result<PathBuf> {
    let text = std::fs::read_to_string(dir.join(names::RELAXATION))?;
    let mut w = create(dir, "relaxation.dat")?;
    writeln!(w, "# t mean_energy std_error")?;
    for line in text.lines().skip(1) {
        writeln!(w, "{}", line.replace(',', " "))?;
    }
    w.flush()?;
    script(dir, "relaxation", "mean energy", "t", "'relaxation.dat' u 1:2 w l t '⟨E⟩'")?;
    Ok(dir.join("relaxation.dat"))
}

fn d_sweep(dir: &Path) -> Result<PathBuf> {
    let sweep: DSweep = read_json(dir, names::D_SWEEP)?;
    let mut rows = sweep.rows.clone();
    rows.sort_by(|a, b| a.delta_t.total_cmp(&b.delta_t));
    let mut w = create(dir, "d_sweep.dat")?;
    writeln!(w, "# delta_t d d_err d_raw d_raw_err")?;
    for r in &rows {
        writeln!(w, "{:e} {:e} {:e} {:e} {:e}", r.delta_t, r.d.mean, r.d.se, r.d_raw.mean, r.d_raw.se)?;
    }
    w.flush()?;
    script(
        dir,
        "d_sweep",
        "diffusion coefficient against coarse-graining interval",
        "Δt",
        "'d_sweep.dat' u 1:2:3 w yerrorbars t 'D', '' u 1:4:5 w yerrorbars t 'D raw'",
    )?;
    Ok(dir.join("d_sweep.dat"))
}

fn velocities(dir: &Path) -> Result<PathBuf> {
    let kf: KinematicField = read_json(dir, names::KINEMATIC_JSON)?;
    let mut w = create(dir, "velocity_fields.dat")?;
    writeln!(w, "# x v v_err u u_err va va_err count")?;
    for i in 0..kf.centers.len() {
        if !kf.valid[i] {
            continue;
        }
        let (v, u, a) = (kf.v[i], kf.u[i], kf.va[i]);
        writeln!(
            w,
            "{:e} {:e} {:e} {:e} {:e} {:e} {:e} {}",
            kf.centers[i], v.mean, v.se, u.mean, u.se, a.mean, a.se, kf.counts[i]
        )?;
    }
    w.flush()?;
    script(
        dir,
        "velocity_fields",
        "coarse-grained velocity fields",
        "x",
        "'velocity_fields.dat' u 1:2:3 w yerrorbars t 'v', '' u 1:4:5 w yerrorbars t 'u', '' u 1:6:7 w yerrorbars t 'v_a'",
    )?;
    Ok(dir.join("velocity_fields.dat"))
}

fn energy_trace(dir: &Path, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let p = cfg
        .particle
        .as_ref()
        .ok_or_else(|| Error::Config("run config has no particle section".into()))?;
    let ens = TrajectoryEnsemble::read_binary(BufReader::new(File::open(pipelines::ensemble_path(dir))?))?;
    let mut w = create(dir, "energy_balance.dat")?;
    writeln!(w, "# t absorbed_power radiated_power mean_energy")?;
    let n = ens.valid().count().max(1) as f64;
    for j in 0..ens.n_records() {
        let (mut a, mut r, mut e) = (0.0, 0.0, 0.0);
        for tr in ens.valid().filter(|t| !t.v.is_empty()) {
            let (x, v) = (tr.x[j], tr.v[j]);
            let drive = tr.drive.get(j).copied().unwrap_or(0.0);
            let acc = p.acceleration(x, v, drive);
            a += drive * v;
            r += p.mass * p.tau * acc * acc;
            e += p.energy(x, v);
        }
        writeln!(w, "{:e} {:e} {:e} {:e}", ens.record_time(j), a / n, r / n, e / n)?;
    }
    w.flush()?;
    script(
        dir,
        "energy_balance",
        "absorbed and radiated power",
        "t",
        "'energy_balance.dat' u 1:2 w l t 'absorbed', '' u 1:3 w l t 'radiated'",
    )?;
    Ok(dir.join("energy_balance.dat"))
}

fn qm_fields(dir: &Path) -> Result<PathBuf> {
    let text = std::fs::read_to_string(dir.join(names::QM_FIELDS_CSV))?;
    let mut w = create(dir, "qm_fields.dat")?;
    writeln!(w, "# x rho v u va V_Q")?;
    for line in text.lines().skip(1).filter(|l| !l.starts_with('#')) {
        writeln!(w, "{}", line.replace(',', " "))?;
    }
    w.flush()?;
    script(dir, "qm_fields", "ground-state fields", "x", "'qm_fields.dat' u 1:2 w l t 'ρ', '' u 1:4 w l t 'u', '' u 1:6 w l t 'V_Q'")?;
    Ok(dir.join("qm_fields.dat"))
}

fn autocorrelation(dir: &Path) -> Result<PathBuf> {
    let rep: AutocorrelationReport = read_json(dir, names::AUTOCORRELATION)?;
    let mut w = create(dir, "autocorrelation.dat")?;
    writeln!(w, "# lag empirical std_error analytic")?;
    for r in &rep.rows {
        writeln!(w, "{:e} {:e} {:e} {:e}", r.lag, r.empirical, r.std_error, r.analytic)?;
    }
    w.flush()?;
    script(
        dir,
        "autocorrelation",
        "field autocovariance",
        "lag",
        "'autocorrelation.dat' u 1:2:3 w yerrorbars t 'ensemble', '' u 1:4 w l t 'analytic'",
    )?;
    Ok(dir.join("autocorrelation.dat"))
}

/// Writes every plot table the run supports. Fails before writing anything
/// when an input artifact is missing.
pub fn emit_plot_data(dir: &Path) -> Result<Vec<PathBuf>> {
    let cfg_path = dir.join(names::CONFIG);
    let experiment = if cfg_path.exists() {
        Some(ExperimentConfig::load(&cfg_path)?.0)
    } else {
        None
    };
    let needed = required(experiment.as_ref().map_or("", |c| c.experiment.as_str()));
    let missing: Vec<String> = needed
        .iter()
        .filter(|n| !dir.join(n).exists())
        .map(|n| n.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifact {
            dir: dir.to_path_buf(),
            names: missing,
        });
    }
    let cfg = experiment.expect("config presence checked");
    match cfg.experiment.as_str() {
        pipelines::SED_HARMONIC_GROUND => Ok(vec![
            density_overlay(dir)?,
            relaxation(dir)?,
            d_sweep(dir)?,
            velocities(dir)?,
            energy_trace(dir, &cfg)?,
        ]),
        pipelines::OU_CALIBRATION => Ok(vec![d_sweep(dir)?, velocities(dir)?]),
        pipelines::SCHRODINGER_REFERENCE => Ok(vec![qm_fields(dir)?]),
        pipelines::FIELD_SYNTHESIS => Ok(vec![autocorrelation(dir)?]),
        other => Err(Error::UnknownPipeline(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_is_linear_inside_and_zero_outside() {
        let xs = [0.0, 1.0, 2.0];
        let ys = [0.0, 2.0, 0.0];
        assert_eq!(interpolate(&xs, &ys, 0.5), 1.0);
        assert_eq!(interpolate(&xs, &ys, 1.5), 1.0);
        assert_eq!(interpolate(&xs, &ys, 3.0), 0.0);
    }

    #[test]
    fn empty_directory_reports_the_config() {
        let dir = tempfile::tempdir().unwrap();
        match emit_plot_data(dir.path()) {
            Err(Error::MissingArtifact { names, .. }) => assert_eq!(names, vec![names::CONFIG.to_string()]),
            other => panic!("{other:?}"),
        }
    }
}
