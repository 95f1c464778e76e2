//! Zero-point field synthesis.
//!
//! A realization of one Cartesian component of the field is the mode sum
//!
//! ```text
//! E_k(t) = Re Σ_n c_{kn} e^{i ω_n t},    |c_{kn}|² = 2 ∫_{bin n} S(ω) dω
//! ```
//!
//! with the one-sided spectral density `S(ω) = (2ħ / 3πc³) ω³` truncated at
//! `omega_cutoff`. With fixed amplitudes the phases `arg c_{kn}` are uniform
//! on `[0, 2π)`; the lag-zero variance `Σ |c|²/2` equals the band integral of
//! `S` exactly for any number of modes.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use num_complex::Complex64;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::chirp::{cis_product, ChirpPlan};
use crate::error::{Error, Result};
use crate::rng;
use crate::stats;

/// How the band `[omega_min, omega_cutoff]` is split into modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ModeSpacing {
    #[default]
    #[serde(rename = "uniform")]
    Uniform,
    /// Bins of equal `ω⁴` width, i.e. equal variance per mode for the
    /// zero-point spectrum.
    #[serde(rename = "uniform-in-omega^4")]
    UniformInOmega4,
}

/// Distribution of the complex mode coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AmplitudeLaw {
    /// Deterministic amplitude, uniform random phase.
    #[default]
    Fixed,
    /// Independent Gaussian quadratures (Rayleigh amplitude).
    Gaussian,
}

/// Shape of the one-sided spectral density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SpectrumShape {
    /// `S(ω) = (2ħ / 3πc³) ω³`.
    #[default]
    ZeroPoint,
    /// `S(ω) = level`; a band-limited white-noise surrogate for tests.
    Flat { level: f64 },
}

fn default_one() -> f64 {
    1.0
}

fn default_components() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    #[serde(default = "default_one")]
    pub hbar: f64,
    #[serde(default = "default_one")]
    pub c: f64,
    /// Lower edge of the synthesized band. Zero covers the full spectrum.
    #[serde(default)]
    pub omega_min: f64,
    pub omega_cutoff: f64,
    pub n_modes: usize,
    #[serde(default)]
    pub spacing: ModeSpacing,
    #[serde(default)]
    pub amplitudes: AmplitudeLaw,
    #[serde(default = "default_components")]
    pub components: usize,
    #[serde(default)]
    pub spectrum: SpectrumShape,
}

impl FieldSpec {
    /// Zero-point spectrum over `[0, omega_cutoff]` with uniform spacing.
    pub fn zero_point(hbar: f64, c: f64, omega_cutoff: f64, n_modes: usize) -> Self {
        Self {
            hbar,
            c,
            omega_min: 0.0,
            omega_cutoff,
            n_modes,
            spacing: ModeSpacing::Uniform,
            amplitudes: AmplitudeLaw::Fixed,
            components: 1,
            spectrum: SpectrumShape::ZeroPoint,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_modes == 0 {
            return Err(Error::invalid("n_modes", "must be at least 1"));
        }
        if !(self.omega_cutoff > 0.0) || !self.omega_cutoff.is_finite() {
            return Err(Error::invalid("omega_cutoff", "must be positive and finite"));
        }
        if !(self.omega_min >= 0.0) || self.omega_min >= self.omega_cutoff {
            return Err(Error::invalid(
                "omega_min",
                "must satisfy 0 <= omega_min < omega_cutoff",
            ));
        }
        if !(1..=3).contains(&self.components) {
            return Err(Error::invalid("components", "must be 1, 2 or 3"));
        }
        if !(self.hbar >= 0.0) || !(self.c > 0.0) {
            return Err(Error::invalid("hbar/c", "need hbar >= 0 and c > 0"));
        }
        if let SpectrumShape::Flat { level } = self.spectrum {
            if !(level >= 0.0) {
                return Err(Error::invalid("spectrum.level", "must be non-negative"));
            }
        }
        Ok(())
    }

    fn zpf_prefactor(&self) -> f64 {
        2.0 * self.hbar / (3.0 * PI * self.c.powi(3))
    }

    /// One-sided spectral density `S(ω)` inside the band, zero outside.
    pub fn spectral_density(&self, omega: f64) -> f64 {
        if omega < self.omega_min || omega > self.omega_cutoff {
            return 0.0;
        }
        match self.spectrum {
            SpectrumShape::ZeroPoint => self.zpf_prefactor() * omega.powi(3),
            SpectrumShape::Flat { level } => level,
        }
    }

    /// `∫_lo^hi S(ω) dω` in closed form.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        match self.spectrum {
            SpectrumShape::ZeroPoint => self.zpf_prefactor() * (hi.powi(4) - lo.powi(4)) / 4.0,
            SpectrumShape::Flat { level } => level * (hi - lo),
        }
    }

    /// Lag-zero variance of one component, `∫ S dω` over the band. For the
    /// zero-point spectrum with `omega_min = 0` this is `ħω_c⁴ / 6πc³`.
    pub fn variance(&self) -> f64 {
        self.band_power(self.omega_min, self.omega_cutoff)
    }

    /// Continuum covariance `φ_c(lag) = ∫ S(ω) cos(ω lag) dω` by composite
    /// Gauss–Legendre quadrature.
    pub fn analytic_covariance(&self, lag: f64) -> f64 {
        let width = self.omega_cutoff - self.omega_min;
        let oscillations = (width * lag.abs() / PI).ceil() as usize;
        let panels = (8 * oscillations).max(64);
        stats::gauss_legendre(
            |w| self.spectral_density(w) * (w * lag).cos(),
            self.omega_min,
            self.omega_cutoff,
            panels,
        )
    }

    /// Mode frequencies and the spectral power carried by each mode.
    pub fn mode_table(&self) -> ModeTable {
        let m = self.n_modes;
        let edges: Vec<f64> = match self.spacing {
            ModeSpacing::Uniform => {
                let dw = (self.omega_cutoff - self.omega_min) / m as f64;
                (0..=m).map(|j| self.omega_min + j as f64 * dw).collect()
            }
            ModeSpacing::UniformInOmega4 => {
                let lo4 = self.omega_min.powi(4);
                let hi4 = self.omega_cutoff.powi(4);
                (0..=m)
                    .map(|j| (lo4 + (hi4 - lo4) * j as f64 / m as f64).powf(0.25))
                    .collect()
            }
        };
        let mut omegas = Vec::with_capacity(m);
        let mut powers = Vec::with_capacity(m);
        let dw = (self.omega_cutoff - self.omega_min) / m as f64;
        for (n, pair) in edges.windows(2).enumerate() {
            omegas.push(match self.spacing {
                ModeSpacing::Uniform => self.omega_min + (n as f64 + 0.5) * dw,
                ModeSpacing::UniformInOmega4 => 0.5 * (pair[0] + pair[1]),
            });
            powers.push(self.band_power(pair[0], pair[1]));
        }
        let arithmetic = match self.spacing {
            ModeSpacing::Uniform => Some((omegas[0], dw)),
            ModeSpacing::UniformInOmega4 => None,
        };
        ModeTable {
            omegas,
            powers,
            arithmetic,
        }
    }
}

/// Discretized spectrum shared by every realization of a spec.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeTable {
    pub omegas: Vec<f64>,
    pub powers: Vec<f64>,
    /// `(ω_0, Δω)` when `ω_n = ω_0 + n Δω`.
    pub arithmetic: Option<(f64, f64)>,
}

/// Number of 64-bit words consumed per mode; fixed so that mode `n` of
/// component `k` always reads the same words of stream `k`.
const WORDS_PER_MODE: usize = 4;

/// One sampled field: immutable once built, cheap to share across threads.
#[derive(Debug, Clone)]
pub struct FieldRealization {
    spec: FieldSpec,
    seed: u64,
    omegas: Vec<f64>,
    arithmetic: Option<(f64, f64)>,
    /// `coeffs[k][n]`: complex coefficient of mode `n`, component `k`.
    coeffs: Vec<Vec<Complex64>>,
    cache: Option<GridCache>,
}

#[derive(Debug, Clone)]
struct GridCache {
    t0: f64,
    dt: f64,
    values: Vec<Vec<f64>>,
}

/// Draws a realization; mode `n` of component `k` depends only on
/// `(seed, k, n)`.
pub fn make_field(spec: &FieldSpec, seed: u64) -> Result<FieldRealization> {
    spec.validate()?;
    let table = spec.mode_table();
    let mut coeffs = Vec::with_capacity(spec.components);
    for k in 0..spec.components {
        let mut stream = rng::stream_rng(seed, k as u64);
        let mut words = [0u64; WORDS_PER_MODE];
        let row = table
            .powers
            .iter()
            .map(|&p| {
                for w in words.iter_mut() {
                    *w = stream.next_u64();
                }
                match spec.amplitudes {
                    AmplitudeLaw::Fixed => {
                        let phase = TAU * rng::unit_f64(words[0]);
                        Complex64::from_polar((2.0 * p).sqrt(), phase)
                    }
                    AmplitudeLaw::Gaussian => {
                        let u1 = rng::open_unit_f64(words[1]);
                        let u2 = rng::unit_f64(words[2]);
                        let r = (-2.0 * u1.ln()).sqrt();
                        let (s, c) = (TAU * u2).sin_cos();
                        Complex64::new(r * c, r * s) * p.sqrt()
                    }
                }
            })
            .collect();
        coeffs.push(row);
    }
    Ok(FieldRealization {
        spec: spec.clone(),
        seed,
        omegas: table.omegas,
        arithmetic: table.arithmetic,
        coeffs,
        cache: None,
    })
}

impl FieldRealization {
    /// Realization with explicit modes (`coeffs[k][n]`), for tests and probes.
    pub fn from_modes(spec: FieldSpec, omegas: Vec<f64>, coeffs: Vec<Vec<Complex64>>) -> Self {
        assert!(coeffs.iter().all(|row| row.len() == omegas.len()));
        Self {
            spec,
            seed: 0,
            omegas,
            arithmetic: None,
            coeffs,
            cache: None,
        }
    }

    pub fn spec(&self) -> &FieldSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn components(&self) -> usize {
        self.coeffs.len()
    }

    /// Per-mode amplitudes of component `k`.
    pub fn amplitudes(&self, k: usize) -> Vec<f64> {
        self.coeffs[k].iter().map(|c| c.norm()).collect()
    }

    /// Per-mode phases of component `k` in `[0, 2π)`.
    pub fn phases(&self, k: usize) -> Vec<f64> {
        self.coeffs[k].iter().map(|c| c.arg().rem_euclid(TAU)).collect()
    }

    /// `E_k(t)` by direct summation over the modes.
    pub fn eval_component(&self, k: usize, t: f64) -> f64 {
        self.coeffs[k]
            .iter()
            .zip(&self.omegas)
            .map(|(c, &w)| (c * cis_product(w, t)).re)
            .sum()
    }

    /// All components at time `t`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        (0..self.components()).map(|k| self.eval_component(k, t)).collect()
    }

    /// Attaches a cache of all components on `t0 + j dt`, `j < count`.
    pub fn with_grid_cache(mut self, t0: f64, dt: f64, count: usize) -> Self {
        let sampler = GridSampler::new(&self.spec, self.arithmetic, t0, dt, count);
        let values = (0..self.components())
            .map(|k| sampler.sample(&self, k))
            .collect();
        self.cache = Some(GridCache { t0, dt, values });
        self
    }

    /// Cached value of component `k` at grid index `j`, if cached.
    pub fn cached(&self, k: usize, j: usize) -> Option<f64> {
        self.cache.as_ref().and_then(|c| c.values[k].get(j).copied())
    }

    /// Grid time of cache index `j`.
    pub fn cache_time(&self, j: usize) -> Option<f64> {
        self.cache.as_ref().map(|c| c.t0 + j as f64 * c.dt)
    }

    /// Writes `t,E1[,E2,E3]` rows for the given times.
    pub fn write_csv<W: Write>(&self, times: &[f64], mut out: W) -> Result<()> {
        let header: Vec<String> = (1..=self.components()).map(|k| format!("E{k}")).collect();
        writeln!(out, "t,{}", header.join(","))?;
        for &t in times {
            let vals: Vec<String> = self.eval(t).iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{t:e},{}", vals.join(","))?;
        }
        Ok(())
    }
}

/// Evaluates realizations of one spec on a fixed uniform grid.
///
/// Uniformly spaced modes go through a chirp-z transform in
/// `O((M + K) log(M + K))`; other spacings fall back to direct summation.
#[derive(Debug)]
pub struct GridSampler {
    t0: f64,
    dt: f64,
    count: usize,
    arithmetic: Option<(f64, f64)>,
    plan: Option<ChirpPlan>,
}

impl GridSampler {
    pub fn for_spec(spec: &FieldSpec, t0: f64, dt: f64, count: usize) -> Self {
        Self::new(spec, spec.mode_table().arithmetic, t0, dt, count)
    }

    fn new(spec: &FieldSpec, arithmetic: Option<(f64, f64)>, t0: f64, dt: f64, count: usize) -> Self {
        let plan = arithmetic.map(|(_, step)| ChirpPlan::new(spec.n_modes, count, step * dt));
        Self {
            t0,
            dt,
            count,
            arithmetic,
            plan,
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(move |j| self.t0 + j as f64 * self.dt)
    }

    /// Component `k` of `fr` on the grid.
    pub fn sample(&self, fr: &FieldRealization, k: usize) -> Vec<f64> {
        match (&self.plan, fr.arithmetic) {
            (Some(plan), Some((w0, _)))
                if fr.arithmetic == self.arithmetic && plan.n_in() == fr.omegas.len() =>
            {
                let a: Vec<Complex64> = fr.coeffs[k]
                    .iter()
                    .zip(&fr.omegas)
                    .map(|(c, &w)| c * cis_product(w, self.t0))
                    .collect();
                plan.evaluate(&a)
                    .into_iter()
                    .enumerate()
                    .map(|(j, x)| (x * cis_product(w0, j as f64 * self.dt)).re)
                    .collect()
            }
            _ => self.times().map(|t| fr.eval_component(k, t)).collect(),
        }
    }
}

/// One row of an autocorrelation comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagRow {
    pub lag: f64,
    pub empirical: f64,
    pub std_error: f64,
    pub analytic: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocorrelationReport {
    pub n_realizations: usize,
    pub t_ref: f64,
    pub rows: Vec<LagRow>,
}

impl AutocorrelationReport {
    pub fn max_abs_z(&self) -> f64 {
        self.rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max)
    }
}

/// Minimum ensemble size accepted by the ensemble checks.
pub const MIN_REALIZATIONS: usize = 100;

fn check_ensemble(ensemble: &[FieldRealization]) -> Result<()> {
    if ensemble.len() < MIN_REALIZATIONS {
        return Err(Error::InsufficientData(format!(
            "{} realizations, need at least {MIN_REALIZATIONS}",
            ensemble.len()
        )));
    }
    Ok(())
}

/// Sample covariance `⟨E_a(t) E_b(t + lag)⟩` across realizations (zero mean
/// known) with its standard error.
pub fn cross_covariance(
    ensemble: &[FieldRealization],
    comp_a: usize,
    comp_b: usize,
    t: f64,
    lag: f64,
) -> (f64, f64) {
    let products: Vec<f64> = ensemble
        .iter()
        .map(|fr| fr.eval_component(comp_a, t) * fr.eval_component(comp_b, t + lag))
        .collect();
    stats::mean_and_se(&products)
}

/// Empirical covariance of component 0 against the continuum `φ_c` per lag.
pub fn autocorrelation_check(
    ensemble: &[FieldRealization],
    t_ref: f64,
    lags: &[f64],
) -> Result<AutocorrelationReport> {
    check_ensemble(ensemble)?;
    let spec = ensemble[0].spec();
    let rows = lags
        .iter()
        .map(|&lag| {
            let (empirical, std_error) = cross_covariance(ensemble, 0, 0, t_ref, lag);
            let analytic = spec.analytic_covariance(lag);
            LagRow {
                lag,
                empirical,
                std_error,
                analytic,
                z: (empirical - analytic) / std_error,
            }
        })
        .collect();
    Ok(AutocorrelationReport {
        n_realizations: ensemble.len(),
        t_ref,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub lag: f64,
    /// `(offset, covariance, std_error)` per absolute time offset.
    pub rows: Vec<(f64, f64, f64)>,
    /// Largest pairwise standardized difference between offsets.
    pub max_pairwise_z: f64,
}

/// Covariance at a fixed lag measured at several absolute times.
pub fn stationarity_check(
    ensemble: &[FieldRealization],
    lag: f64,
    offsets: &[f64],
) -> Result<StationarityReport> {
    check_ensemble(ensemble)?;
    if offsets.len() < 3 {
        return Err(Error::invalid("offsets", "need at least three time offsets"));
    }
    let rows: Vec<(f64, f64, f64)> = offsets
        .iter()
        .map(|&t| {
            let (c, se) = cross_covariance(ensemble, 0, 0, t, lag);
            (t, c, se)
        })
        .collect();
    let mut max_z: f64 = 0.0;
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            let z = (a.1 - b.1) / (a.2 * a.2 + b.2 * b.2).sqrt();
            max_z = max_z.max(z.abs());
        }
    }
    Ok(StationarityReport {
        lag,
        rows,
        max_pairwise_z: max_z,
    })
}

/// Draws `n` independent realizations with seeds derived from `master_seed`.
pub fn make_ensemble(spec: &FieldSpec, master_seed: u64, n: usize) -> Result<Vec<FieldRealization>> {
    (0..n)
        .map(|i| make_field(spec, rng::derive_seed(master_seed, i as u64)))
        .collect()
}
