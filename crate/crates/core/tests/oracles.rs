//! Estimators against processes with known answers, and SED runs whose
//! stationary state must not depend on how it was reached.

use sedkit::dynamics::{self, EnsembleRequest, InitialCondition, ParticleSpec, TimeGrid};
use sedkit::field::FieldSpec;
use sedkit::harness::pipelines::slope_through_origin;
use sedkit::kinematics::{self, BinSpec, CoarseGrainSpec};
use sedkit::oracle::{self, OuSpec};
use sedkit::potential::Potential;

fn ou_slope(n_traj: usize, seed: u64) -> (f64, f64) {
    let ou = OuSpec {
        kappa: 1.0,
        diffusion: 1.0,
        x0: None,
    };
    let ens = oracle::ou_ensemble(&ou, TimeGrid::new(0.0, 0.02, 2500), n_traj, seed, 1).unwrap();
    let cg = CoarseGrainSpec::new(0.02, BinSpec { x_min: -2.5, x_max: 2.5, n_bins: 20 }, (0.0, 50.0));
    let kf = kinematics::estimate_field(&ens, &cg).unwrap();
    slope_through_origin(&kf.centers, &kf.u, &kf.valid)
}

#[test]
fn osmotic_slope_error_shrinks_with_ensemble_size() {
    let exact = OuSpec {
        kappa: 1.0,
        diffusion: 1.0,
        x0: None,
    }
    .osmotic_estimator_mean(1.0, 0.02);
    let (small, small_se) = ou_slope(50, 11);
    let (large, large_se) = ou_slope(800, 11);
    // Sixteen times the data: four times smaller error.
    let ratio = small_se / large_se;
    assert!((3.0..5.5).contains(&ratio), "se ratio {ratio}");
    assert!((small - exact).abs() < 4.0 * small_se, "{small} vs {exact} ± {small_se}");
    assert!((large - exact).abs() < 4.0 * large_se, "{large} vs {exact} ± {large_se}");
}

#[test]
fn wiener_process_has_a_wide_diffusion_plateau() {
    let d0 = 0.25;
    let ens = oracle::ou_ensemble(&OuSpec::wiener(d0), TimeGrid::new(0.0, 0.01, 2000), 400, 5, 1).unwrap();
    let cg = CoarseGrainSpec {
        min_count: 50,
        ..CoarseGrainSpec::new(0.01, BinSpec { x_min: -6.0, x_max: 6.0, n_bins: 24 }, (0.0, 20.0))
    };
    let sweep = kinematics::d_sweep(&ens, &cg, &kinematics::log_lags(1, 100, 9)).unwrap();
    let plateau = sweep.plateau.expect("plateau");
    assert!(plateau.decades() >= 1.99, "{plateau:?}");
    assert!(plateau.d.z(d0).abs() < 3.0, "{plateau:?}");
    assert!(sweep.flag.is_none());
}

#[test]
fn ou_diffusion_follows_its_finite_lag_law() {
    let ou = OuSpec {
        kappa: 0.5,
        diffusion: 0.5,
        x0: None,
    };
    let ens = oracle::ou_ensemble(&ou, TimeGrid::new(0.0, 0.1, 2000), 300, 3, 1).unwrap();
    let cg = CoarseGrainSpec::new(1.0, BinSpec { x_min: -3.0, x_max: 3.0, n_bins: 24 }, (0.0, 200.0));
    let d = kinematics::estimate_d(&ens, &cg).unwrap();
    let expected = ou.diffusion_estimator_mean(1.0);
    assert!(d.pooled.z(expected).abs() < 3.5, "{:?} vs {expected}", d.pooled);
    assert!(d.pooled.z(ou.diffusion).abs() > 5.0, "lag bias should be resolved");
}

struct SedRun {
    tau: f64,
    dt: f64,
    initial: InitialCondition,
}

fn stationary_energy(run: SedRun) -> (f64, f64) {
    let p = ParticleSpec::new(1.0, run.tau, Potential::Harmonic { omega: 1.0 });
    let field = FieldSpec {
        omega_min: 0.5,
        ..FieldSpec::zero_point(1.0, 1.0, 1.5, 2000)
    };
    let relax = 1.0 / run.tau;
    let t_end = 12.0 * relax;
    let stride = (1.0 / run.dt).round() as usize;
    let ens = dynamics::integrate_ensemble(&EnsembleRequest {
        particle: &p,
        field: Some(&field),
        initial: &run.initial,
        grid: TimeGrid::new(0.0, run.dt, (t_end / run.dt).round() as usize),
        n_traj: 200,
        master_seed: 77,
        record_stride: stride,
        threads: 0,
    })
    .unwrap();
    dynamics::relaxation_curve(&ens, &p).window_mean(6.0 * relax, t_end)
}

fn assert_consistent(a: (f64, f64), b: (f64, f64)) {
    for e in [a, b] {
        assert!((e.0 - 0.5).abs() < 0.05 * 0.5, "{e:?}");
    }
    let combined = a.1.hypot(b.1);
    assert!((a.0 - b.0).abs() < 3.0 * combined, "{a:?} vs {b:?}");
}

#[test]
fn hot_and_cold_starts_reach_the_same_energy() {
    let cold = stationary_energy(SedRun {
        tau: 1e-2,
        dt: 0.2,
        initial: InitialCondition::cold(),
    });
    let hot = stationary_energy(SedRun {
        tau: 1e-2,
        dt: 0.2,
        initial: InitialCondition::Stationary { scale: 10.0 },
    });
    assert_consistent(cold, hot);
}

#[test]
fn halving_the_step_leaves_the_energy_unchanged() {
    let coarse = stationary_energy(SedRun {
        tau: 1e-2,
        dt: 0.2,
        initial: InitialCondition::cold(),
    });
    let fine = stationary_energy(SedRun {
        tau: 1e-2,
        dt: 0.1,
        initial: InitialCondition::cold(),
    });
    assert_consistent(coarse, fine);
}

#[test]
fn stationary_energy_does_not_depend_on_tau() {
    let strong = stationary_energy(SedRun {
        tau: 1e-2,
        dt: 0.2,
        initial: InitialCondition::cold(),
    });
    let weak = stationary_energy(SedRun {
        tau: 1e-3,
        dt: 0.2,
        initial: InitialCondition::cold(),
    });
    assert_consistent(strong, weak);
}
