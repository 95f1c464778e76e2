//! Velocity fields and diffusion coefficient of a trajectory ensemble from
//! finite-lag increments.
//!
//! With `Δ₊ = x(t+Δt) − x(t)` and `Δ₋ = x(t) − x(t−Δt)`, binned on `x(t)`:
//!
//! ```text
//! v   = ⟨Δ₊ + Δ₋⟩ / 2Δt        flow velocity
//! u   = ⟨Δ₊ − Δ₋⟩ / 2Δt        osmotic velocity
//! v_a = ⟨Δ₋⟩ / Δt = v − u      access (backward) velocity
//! D   = ⟨(Δ₊ − ⟨Δ₊|x⟩)²⟩ / 2Δt
//! ```
//!
//! The sign of `u` follows from the OU oracle: a stationary trap gives
//! `u = D ρ′/ρ`, pointing up the density gradient.
//!
//! Samples from all reference times in the window are pooled. Standard
//! errors treat each trajectory as one independent cluster, so correlated
//! samples along a path are never counted as independent.

use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ParticleSpec, TrajectoryEnsemble};
use crate::error::{Error, Result};
use crate::stats;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n_bins: usize,
}

impl BinSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins == 0 || !(self.x_max > self.x_min) {
            return Err(Error::invalid("bins", "need n_bins ≥ 1 and x_min < x_max"));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_bins as f64
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.n_bins)
            .map(|i| self.x_min + i as f64 * self.width())
            .collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_bins)
            .map(|i| self.x_min + (i as f64 + 0.5) * self.width())
            .collect()
    }

    pub fn index(&self, x: f64) -> Option<usize> {
        if !(x >= self.x_min && x < self.x_max) {
            return None;
        }
        Some((((x - self.x_min) / self.width()) as usize).min(self.n_bins - 1))
    }
}

fn default_min_count() -> usize {
    30
}
fn default_thin() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_fit_window() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoarseGrainSpec {
    /// Must be a whole number of recorded steps.
    pub delta_t: f64,
    pub bins: BinSpec,
    /// Reference times are pooled from `[t_window.0, t_window.1]`.
    pub t_window: (f64, f64),
    #[serde(default = "default_min_count")]
    pub min_count: usize,
    /// Use every `thin`-th record as a reference time.
    #[serde(default = "default_thin")]
    pub thin: usize,
    /// Subtract the per-bin conditional mean before squaring increments for
    /// `D`. When false the raw second moment is reported as the estimate.
    #[serde(default = "default_true")]
    pub subtract_drift: bool,
    /// Bins per local quadratic fit for spatial derivatives.
    #[serde(default = "default_fit_window")]
    pub fit_window: usize,
    /// Gaussian-smooth the density with bandwidth equal to the bin width.
    #[serde(default)]
    pub smooth_density: bool,
}

impl CoarseGrainSpec {
    pub fn new(delta_t: f64, bins: BinSpec, t_window: (f64, f64)) -> Self {
        Self {
            delta_t,
            bins,
            t_window,
            min_count: default_min_count(),
            thin: 1,
            subtract_drift: true,
            fit_window: default_fit_window(),
            smooth_density: false,
        }
    }

    /// Lag in recorded steps.
    pub fn lag(&self, record_dt: f64) -> Result<usize> {
        let r = self.delta_t / record_dt;
        let lag = r.round();
        if !(lag >= 1.0) || (r - lag).abs() > 1e-6 * lag {
            return Err(Error::invalid(
                "coarse_grain.delta_t",
                format!("{} is not a positive multiple of the recorded step {record_dt}", self.delta_t),
            ));
        }
        Ok(lag as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.bins.validate()?;
        if self.thin == 0 {
            return Err(Error::invalid("coarse_grain.thin", "must be at least 1"));
        }
        if self.fit_window < 3 {
            return Err(Error::invalid("coarse_grain.fit_window", "must be at least 3"));
        }
        if !(self.t_window.1 >= self.t_window.0) {
            return Err(Error::invalid("coarse_grain.t_window", "end before start"));
        }
        Ok(())
    }
}

/// `Δt / T` for the systematic period and for the fastest field period.
/// Clean coarse graining needs the first small and the second large.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSeparation {
    pub delta_t_over_systematic_period: Option<f64>,
    pub delta_t_over_field_period: Option<f64>,
}

impl ScaleSeparation {
    pub fn new(delta_t: f64, systematic_omega: Option<f64>, field_cutoff: Option<f64>) -> Self {
        let ratio = |w: f64| delta_t * w / std::f64::consts::TAU;
        Self {
            delta_t_over_systematic_period: systematic_omega.map(ratio),
            delta_t_over_field_period: field_cutoff.map(ratio),
        }
    }
}

/// Mean with standard error; NaN for invalid bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    #[serde(with = "nan_as_null")]
    pub mean: f64,
    #[serde(with = "nan_as_null")]
    pub se: f64,
}

impl Estimate {
    pub const INVALID: Estimate = Estimate {
        mean: f64::NAN,
        se: f64::NAN,
    };

    pub fn new(mean: f64, se: f64) -> Self {
        Self { mean, se }
    }

    pub fn z(&self, reference: f64) -> f64 {
        (self.mean - reference) / self.se
    }
}

/// JSON has no NaN; invalid values round-trip through `null`.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionEstimate {
    /// Estimate used downstream: drift-subtracted unless disabled.
    pub pooled: Estimate,
    /// Raw `⟨Δ₊²⟩ / 2Δt`.
    pub raw: Estimate,
    /// Drift-subtracted value per bin, for checking constancy.
    pub per_bin: Vec<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicField {
    pub schema_version: u32,
    pub spec: CoarseGrainSpec,
    pub lag: usize,
    pub centers: Vec<f64>,
    pub counts: Vec<usize>,
    pub valid: Vec<bool>,
    pub v: Vec<Estimate>,
    pub u: Vec<Estimate>,
    /// `v − u` bin by bin.
    pub va: Vec<Estimate>,
    /// Backward-difference estimate `⟨Δ₋⟩/Δt`.
    pub va_direct: Vec<Estimate>,
    /// Histogram density (normalized over all samples, including those
    /// outside the bins).
    pub rho: Vec<Estimate>,
    pub diffusion: DiffusionEstimate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<ScaleSeparation>,
    pub n_trajectories: usize,
    pub n_samples: usize,
}

/// Per-sample estimators at record `j`: `(v, u, v_a)`.
pub fn pointwise_velocities(x: &[f64], j: usize, lag: usize, delta_t: f64) -> (f64, f64, f64) {
    let fwd = x[j + lag] - x[j];
    let bwd = x[j] - x[j - lag];
    (
        (fwd + bwd) / (2.0 * delta_t),
        (fwd - bwd) / (2.0 * delta_t),
        bwd / delta_t,
    )
}

/// Per-trajectory, per-bin sums.
#[derive(Debug, Clone, Copy, Default)]
struct Cell {
    n: f64,
    v: f64,
    u: f64,
    va: f64,
    fwd: f64,
    fwd2: f64,
}

struct Accumulated {
    cells: Vec<Vec<Cell>>,
    /// Samples per trajectory including out-of-range positions.
    totals: Vec<f64>,
}

fn accumulate(ens: &TrajectoryEnsemble, cg: &CoarseGrainSpec, lag: usize) -> Result<Accumulated> {
    let delta_t = lag as f64 * ens.record_dt();
    let window = ens.window_indices(cg.t_window);
    let n_rec = ens.n_records();
    let start = window.start.max(lag);
    let end = window.end.min(n_rec.saturating_sub(lag));
    if start >= end {
        return Err(Error::InsufficientData(format!(
            "no reference times in {:?} at least Δt = {delta_t} from the grid ends",
            cg.t_window
        )));
    }
    let nb = cg.bins.n_bins;
    let per: Vec<(Vec<Cell>, f64)> = ens
        .trajectories
        .par_iter()
        .filter(|t| t.is_ok())
        .map(|t| {
            let mut cells = vec![Cell::default(); nb];
            let mut total = 0.0;
            for j in (start..end).step_by(cg.thin) {
                total += 1.0;
                let Some(b) = cg.bins.index(t.x[j]) else { continue };
                let (v, u, va) = pointwise_velocities(&t.x, j, lag, delta_t);
                let fwd = t.x[j + lag] - t.x[j];
                let c = &mut cells[b];
                c.n += 1.0;
                c.v += v;
                c.u += u;
                c.va += va;
                c.fwd += fwd;
                c.fwd2 += fwd * fwd;
            }
            (cells, total)
        })
        .collect();
    if per.is_empty() {
        return Err(Error::InsufficientData("no valid trajectories".into()));
    }
    let (cells, totals) = per.into_iter().unzip();
    Ok(Accumulated { cells, totals })
}

fn binned(acc: &Accumulated, b: usize, field: impl Fn(&Cell) -> f64) -> Estimate {
    let sums: Vec<f64> = acc.cells.iter().map(|c| field(&c[b])).collect();
    let counts: Vec<f64> = acc.cells.iter().map(|c| c[b].n).collect();
    let (m, se) = stats::cluster_ratio(&sums, &counts);
    Estimate::new(m, se)
}

/// All velocity fields, density and diffusion coefficient at one `Δt`.
pub fn estimate_field(ens: &TrajectoryEnsemble, cg: &CoarseGrainSpec) -> Result<KinematicField> {
    cg.validate()?;
    let lag = cg.lag(ens.record_dt())?;
    let delta_t = lag as f64 * ens.record_dt();
    let acc = accumulate(ens, cg, lag)?;
    let nb = cg.bins.n_bins;

    let counts: Vec<usize> = (0..nb)
        .map(|b| acc.cells.iter().map(|c| c[b].n).sum::<f64>() as usize)
        .collect();
    let valid: Vec<bool> = counts.iter().map(|&n| n >= cg.min_count.max(1)).collect();
    let pick = |b: usize, f: &dyn Fn(&Cell) -> f64| {
        if valid[b] {
            binned(&acc, b, f)
        } else {
            Estimate::INVALID
        }
    };
    let v: Vec<Estimate> = (0..nb).map(|b| pick(b, &|c| c.v)).collect();
    let u: Vec<Estimate> = (0..nb).map(|b| pick(b, &|c| c.u)).collect();
    let va_direct: Vec<Estimate> = (0..nb).map(|b| pick(b, &|c| c.va)).collect();
    let va: Vec<Estimate> = (0..nb)
        .map(|b| Estimate::new(v[b].mean - u[b].mean, va_direct[b].se))
        .collect();

    let width = cg.bins.width();
    let mut rho: Vec<Estimate> = (0..nb)
        .map(|b| {
            let sums: Vec<f64> = acc.cells.iter().map(|c| c[b].n).collect();
            let (m, se) = stats::cluster_ratio(&sums, &acc.totals);
            Estimate::new(m / width, se / width)
        })
        .collect();
    if cg.smooth_density {
        rho = smooth(&cg.bins.centers(), &rho, width);
    }

    let diffusion = diffusion_from(&acc, &valid, delta_t, cg.subtract_drift);
    Ok(KinematicField {
        schema_version: SCHEMA_VERSION,
        spec: CoarseGrainSpec {
            delta_t,
            ..cg.clone()
        },
        lag,
        centers: cg.bins.centers(),
        counts,
        valid,
        v,
        u,
        va,
        va_direct,
        rho,
        diffusion,
        scales: None,
        n_trajectories: acc.cells.len(),
        n_samples: acc.totals.iter().sum::<f64>() as usize,
    })
}

fn diffusion_from(acc: &Accumulated, valid: &[bool], delta_t: f64, subtract: bool) -> DiffusionEstimate {
    let nb = valid.len();
    let mean_fwd: Vec<f64> = (0..nb)
        .map(|b| {
            let s: f64 = acc.cells.iter().map(|c| c[b].fwd).sum();
            let n: f64 = acc.cells.iter().map(|c| c[b].n).sum();
            if n > 0.0 {
                s / n
            } else {
                0.0
            }
        })
        .collect();
    let residual = |c: &Cell, m: f64| c.fwd2 - 2.0 * m * c.fwd + c.n * m * m;
    let scale = 1.0 / (2.0 * delta_t);
    let per_bin = (0..nb)
        .map(|b| {
            if !valid[b] {
                return Estimate::INVALID;
            }
            let sums: Vec<f64> = acc.cells.iter().map(|c| residual(&c[b], mean_fwd[b])).collect();
            let counts: Vec<f64> = acc.cells.iter().map(|c| c[b].n).collect();
            let (m, se) = stats::cluster_ratio(&sums, &counts);
            Estimate::new(m * scale, se * scale)
        })
        .collect();
    let pooled_with = |f: &dyn Fn(&Cell, usize) -> f64| {
        let sums: Vec<f64> = acc
            .cells
            .iter()
            .map(|c| (0..nb).filter(|&b| valid[b]).map(|b| f(&c[b], b)).sum())
            .collect();
        let counts: Vec<f64> = acc
            .cells
            .iter()
            .map(|c| (0..nb).filter(|&b| valid[b]).map(|b| c[b].n).sum())
            .collect();
        let (m, se) = stats::cluster_ratio(&sums, &counts);
        Estimate::new(m * scale, se * scale)
    };
    let conditional = pooled_with(&|c, b| residual(c, mean_fwd[b]));
    let raw = pooled_with(&|c, _| c.fwd2);
    DiffusionEstimate {
        pooled: if subtract { conditional } else { raw },
        raw,
        per_bin,
    }
}

fn smooth(centers: &[f64], rho: &[Estimate], h: f64) -> Vec<Estimate> {
    centers
        .iter()
        .map(|&x0| {
            let (mut num, mut var, mut wsum) = (0.0, 0.0, 0.0);
            for (&x, r) in centers.iter().zip(rho) {
                let w = (-0.5 * ((x - x0) / h).powi(2)).exp();
                num += w * r.mean;
                var += w * w * r.se * r.se;
                wsum += w;
            }
            Estimate::new(num / wsum, var.sqrt() / wsum)
        })
        .collect()
}

/// Flow velocity per bin.
pub fn estimate_v(ens: &TrajectoryEnsemble, cg: &CoarseGrainSpec) -> Result<Vec<Estimate>> {
    estimate_field(ens, cg).map(|kf| kf.v)
}

/// Osmotic velocity per bin.
pub fn estimate_u(ens: &TrajectoryEnsemble, cg: &CoarseGrainSpec) -> Result<Vec<Estimate>> {
    estimate_field(ens, cg).map(|kf| kf.u)
}

/// Access velocity per bin as `(direct, v − u)`.
pub fn estimate_va(ens: &TrajectoryEnsemble, cg: &CoarseGrainSpec) -> Result<(Vec<Estimate>, Vec<Estimate>)> {
    estimate_field(ens, cg).map(|kf| (kf.va_direct, kf.va))
}

pub fn estimate_d(ens: &TrajectoryEnsemble, cg: &CoarseGrainSpec) -> Result<DiffusionEstimate> {
    estimate_field(ens, cg).map(|kf| kf.diffusion)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta_t: f64,
    pub d: Estimate,
    pub d_raw: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub first: usize,
    pub last: usize,
    pub delta_t_min: f64,
    pub delta_t_max: f64,
    /// Inverse-variance weighted `D` over the plateau.
    pub d: Estimate,
}

impl Plateau {
    pub fn decades(&self) -> f64 {
        (self.delta_t_max / self.delta_t_min).log10()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DSweep {
    pub schema_version: u32,
    pub rows: Vec<SweepRow>,
    pub plateau: Option<Plateau>,
    /// Set when no plateau of at least three points exists.
    pub flag: Option<String>,
}

pub const NO_SCALE_SEPARATION: &str = "no clean scale separation";

/// Roughly log-spaced distinct integer lags in `[min_lag, max_lag]`.
pub fn log_lags(min_lag: usize, max_lag: usize, n: usize) -> Vec<usize> {
    let (lo, hi) = (min_lag.max(1) as f64, max_lag.max(min_lag.max(1)) as f64);
    let mut lags: Vec<usize> = (0..n.max(2))
        .map(|i| (lo * (hi / lo).powf(i as f64 / (n.max(2) - 1) as f64)).round() as usize)
        .collect();
    lags.dedup();
    lags
}

/// `D(Δt)` over the given lags (in recorded steps) with plateau detection.
///
/// A plateau is a run of consecutive lags whose estimates all lie within
/// three standard errors of the run's weighted mean; the run spanning the
/// widest `Δt` ratio wins.
pub fn d_sweep(ens: &TrajectoryEnsemble, cg: &CoarseGrainSpec, lags: &[usize]) -> Result<DSweep> {
    let mut lags = lags.to_vec();
    lags.sort_unstable();
    lags.dedup();
    let rows: Vec<SweepRow> = lags
        .iter()
        .map(|&lag| {
            let spec = CoarseGrainSpec {
                delta_t: lag as f64 * ens.record_dt(),
                ..cg.clone()
            };
            let kf = estimate_field(ens, &spec)?;
            Ok(SweepRow {
                delta_t: kf.spec.delta_t,
                d: kf.diffusion.pooled,
                d_raw: kf.diffusion.raw,
            })
        })
        .collect::<Result<_>>()?;
    let plateau = find_plateau(&rows);
    let flag = plateau.is_none().then(|| NO_SCALE_SEPARATION.to_string());
    Ok(DSweep {
        schema_version: SCHEMA_VERSION,
        rows,
        plateau,
        flag,
    })
}

/// Inverse-variance weighted mean. Sweep rows reuse the same increments,
/// so they are treated as fully correlated: the error is the weighted mean
/// of the individual errors, not the independent-sample `1/√Σw`.
fn weighted_mean(ds: &[Estimate]) -> Estimate {
    let (mut num, mut err, mut den) = (0.0, 0.0, 0.0);
    for d in ds {
        let w = 1.0 / (d.se * d.se);
        num += w * d.mean;
        err += w * d.se;
        den += w;
    }
    Estimate::new(num / den, err / den)
}

fn find_plateau(rows: &[SweepRow]) -> Option<Plateau> {
    let ok = |r: &SweepRow| r.d.mean.is_finite() && r.d.se.is_finite() && r.d.se > 0.0;
    let mut best: Option<Plateau> = None;
    for first in 0..rows.len() {
        for last in first + 2..rows.len() {
            let run = &rows[first..=last];
            if !run.iter().all(ok) {
                break;
            }
            let ds: Vec<Estimate> = run.iter().map(|r| r.d).collect();
            let m = weighted_mean(&ds);
            if ds.iter().any(|d| (d.mean - m.mean).abs() > 3.0 * d.se) {
                continue;
            }
            let candidate = Plateau {
                first,
                last,
                delta_t_min: rows[first].delta_t,
                delta_t_max: rows[last].delta_t,
                d: m,
            };
            if best.as_ref().is_none_or(|b| candidate.decades() > b.decades()) {
                best = Some(candidate);
            }
        }
    }
    best
}

/// Value, first and second derivative of a binned field from local
/// count-weighted quadratic least squares. `None` where fewer than three
/// valid bins fall inside the window.
pub fn local_quadratic(
    centers: &[f64],
    values: &[f64],
    weights: &[f64],
    valid: &[bool],
    window: usize,
) -> Vec<Option<(f64, f64, f64)>> {
    let half = window / 2;
    (0..centers.len())
        .map(|i| {
            if !valid[i] {
                return None;
            }
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(centers.len() - 1);
            let mut ata = Matrix3::zeros();
            let mut atb = Vector3::zeros();
            let mut used = 0;
            for j in lo..=hi {
                if !valid[j] || !values[j].is_finite() {
                    continue;
                }
                let dx = centers[j] - centers[i];
                let row = Vector3::new(1.0, dx, dx * dx);
                ata += weights[j] * row * row.transpose();
                atb += weights[j] * values[j] * row;
                used += 1;
            }
            if used < 3 {
                return None;
            }
            let c = ata.lu().solve(&atb)?;
            Some((c[0], c[1], 2.0 * c[2]))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub schema_version: u32,
    pub lambda: i32,
    pub diffusion: f64,
    pub centers: Vec<f64>,
    /// `m(v v′ − λ(u u′ + D u″)) − f`, per bin; `null` where not computable.
    pub residual_12: Vec<Option<f64>>,
    /// `m(v u′ + u v′ + D v″)`, per bin.
    pub residual_14: Vec<Option<f64>>,
    /// Density-weighted RMS force used for normalization.
    pub force_scale: f64,
    pub normalized_12: f64,
    pub normalized_14: f64,
    pub bins_used: usize,
    /// Time-derivative terms are dropped: the ensemble is taken as stationary.
    pub stationary_assumed: bool,
}

/// Residuals of the stationary stochastic Newton equations for branch
/// `lambda` (`+1` quantum, `−1` Brownian), weighted by `rho`.
pub fn dynamics_residuals(kf: &KinematicField, rho: &[f64], p: &ParticleSpec, lambda: i32) -> Result<ResidualReport> {
    if lambda != 1 && lambda != -1 {
        return Err(Error::invalid("lambda", "must be +1 or -1"));
    }
    let m = p.mass;
    let d = kf.diffusion.pooled.mean;
    let weights: Vec<f64> = kf.counts.iter().map(|&c| c as f64).collect();
    let vs: Vec<f64> = kf.v.iter().map(|e| e.mean).collect();
    let us: Vec<f64> = kf.u.iter().map(|e| e.mean).collect();
    let vfit = local_quadratic(&kf.centers, &vs, &weights, &kf.valid, kf.spec.fit_window);
    let ufit = local_quadratic(&kf.centers, &us, &weights, &kf.valid, kf.spec.fit_window);

    let mut r12 = vec![None; kf.centers.len()];
    let mut r14 = vec![None; kf.centers.len()];
    let (mut s12, mut s14, mut sf, mut sk, mut wsum) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut used = 0;
    for (i, &x) in kf.centers.iter().enumerate() {
        let (Some((v, dv, d2v)), Some((u, du, d2u))) = (vfit[i], ufit[i]) else {
            continue;
        };
        let f = p.force(x);
        let kinetic = m * (u * du + d * d2u);
        let a = m * (v * dv - lambda as f64 * (u * du + d * d2u)) - f;
        let b = m * (v * du + u * dv + d * d2v);
        r12[i] = Some(a);
        r14[i] = Some(b);
        let w = rho.get(i).copied().unwrap_or(0.0).max(0.0);
        s12 += w * a * a;
        s14 += w * b * b;
        sf += w * f * f;
        sk += w * kinetic * kinetic;
        wsum += w;
        used += 1;
    }
    if used < 3 || !(wsum > 0.0) {
        return Err(Error::InsufficientData(
            "too few populated bins for second derivatives".into(),
        ));
    }
    let force_scale = if sf > 0.0 { (sf / wsum).sqrt() } else { (sk / wsum).sqrt() };
    Ok(ResidualReport {
        schema_version: SCHEMA_VERSION,
        lambda,
        diffusion: d,
        centers: kf.centers.clone(),
        residual_12: r12,
        residual_14: r14,
        force_scale,
        normalized_12: (s12 / wsum).sqrt() / force_scale,
        normalized_14: (s14 / wsum).sqrt() / force_scale,
        bins_used: used,
        stationary_assumed: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchDecision {
    pub lambda: i32,
    pub residual_plus: f64,
    pub residual_minus: f64,
    /// Rejected branch residual over accepted branch residual.
    pub separation: f64,
}

/// Picks the branch with the smaller normalized residual of the first
/// stochastic Newton equation.
pub fn classify_branch(kf: &KinematicField, rho: &[f64], p: &ParticleSpec) -> Result<BranchDecision> {
    let plus = dynamics_residuals(kf, rho, p, 1)?.normalized_12;
    let minus = dynamics_residuals(kf, rho, p, -1)?.normalized_12;
    let (lambda, accepted, rejected) = if plus <= minus { (1, plus, minus) } else { (-1, minus, plus) };
    Ok(BranchDecision {
        lambda,
        residual_plus: plus,
        residual_minus: minus,
        separation: rejected / accepted,
    })
}

/// `∂v/∂t` and `∂u/∂t` per bin from two reference windows. Experimental:
/// the estimate is a difference of two noisy fields and is never used in
/// pass/fail checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeDerivatives {
    pub experimental: bool,
    pub centers: Vec<f64>,
    pub dv_dt: Vec<Estimate>,
    pub du_dt: Vec<Estimate>,
}

pub fn time_derivatives(
    ens: &TrajectoryEnsemble,
    cg: &CoarseGrainSpec,
    earlier: (f64, f64),
    later: (f64, f64),
) -> Result<TimeDerivatives> {
    let a = estimate_field(ens, &CoarseGrainSpec { t_window: earlier, ..cg.clone() })?;
    let b = estimate_field(ens, &CoarseGrainSpec { t_window: later, ..cg.clone() })?;
    let span = 0.5 * ((later.0 + later.1) - (earlier.0 + earlier.1));
    if !(span > 0.0) {
        return Err(Error::invalid("windows", "later window must follow the earlier one"));
    }
    let diff = |x: &[Estimate], y: &[Estimate]| -> Vec<Estimate> {
        x.iter()
            .zip(y)
            .map(|(p, q)| Estimate::new((q.mean - p.mean) / span, p.se.hypot(q.se) / span))
            .collect()
    };
    Ok(TimeDerivatives {
        experimental: true,
        centers: a.centers.clone(),
        dv_dt: diff(&a.v, &b.v),
        du_dt: diff(&a.u, &b.u),
    })
}

impl KinematicField {
    /// Builds a field from closed-form `v`, `u`, `ρ` and `D`, with zero
    /// errors and every bin valid.
    pub fn from_analytic(
        bins: BinSpec,
        delta_t: f64,
        diffusion: f64,
        v: impl Fn(f64) -> f64,
        u: impl Fn(f64) -> f64,
        rho: impl Fn(f64) -> f64,
    ) -> Self {
        let centers = bins.centers();
        let n = centers.len();
        let exact = |f: &dyn Fn(f64) -> f64| -> Vec<Estimate> {
            centers.iter().map(|&x| Estimate::new(f(x), 0.0)).collect()
        };
        let vv = exact(&v);
        let uu = exact(&u);
        let va = exact(&|x| v(x) - u(x));
        let d = Estimate::new(diffusion, 0.0);
        Self {
            schema_version: SCHEMA_VERSION,
            spec: CoarseGrainSpec::new(delta_t, bins, (0.0, 0.0)),
            lag: 1,
            counts: vec![1; n],
            valid: vec![true; n],
            v: vv,
            u: uu,
            va: va.clone(),
            va_direct: va,
            rho: exact(&rho),
            diffusion: DiffusionEstimate {
                pooled: d,
                raw: d,
                per_bin: vec![d; n],
            },
            scales: None,
            n_trajectories: 0,
            n_samples: 0,
            centers,
        }
    }

    pub fn rho_values(&self) -> Vec<f64> {
        self.rho.iter().map(|e| e.mean).collect()
    }

    /// CSV `bin_center,v,v_err,u,u_err,va,va_err,count`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "bin_center,v,v_err,u,u_err,va,va_err,count")?;
        for i in 0..self.centers.len() {
            writeln!(
                out,
                "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
                self.centers[i],
                self.v[i].mean,
                self.v[i].se,
                self.u[i].mean,
                self.u[i].se,
                self.va[i].mean,
                self.va[i].se,
                self.counts[i]
            )?;
        }
        Ok(())
    }
}
