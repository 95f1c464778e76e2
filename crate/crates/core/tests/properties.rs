use proptest::prelude::*;

use sedkit::dynamics::{self, EnsembleRequest, InitialCondition, ParticleSpec, TimeGrid, TrajectoryEnsemble};
use sedkit::field::{self, FieldSpec};
use sedkit::harness::config::ExperimentConfig;
use sedkit::kinematics::{self, BinSpec, CoarseGrainSpec};
use sedkit::potential::Potential;

fn small_field(hbar: f64) -> FieldSpec {
    FieldSpec {
        omega_min: 0.5,
        ..FieldSpec::zero_point(hbar, 1.0, 1.5, 64)
    }
}

fn small_ensemble(seed: u64, threads: usize) -> TrajectoryEnsemble {
    let p = ParticleSpec::new(1.0, 1e-2, Potential::Harmonic { omega: 1.0 });
    let f = small_field(1.0);
    dynamics::integrate_ensemble(&EnsembleRequest {
        particle: &p,
        field: Some(&f),
        initial: &InitialCondition::Stationary { scale: 1.0 },
        grid: TimeGrid::new(0.0, 0.2, 200),
        n_traj: 6,
        master_seed: seed,
        record_stride: 2,
        threads,
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn config_survives_toml_round_trip(
        seed in 0u64..=i64::MAX as u64,
        n_modes in 1usize..5000,
        cutoff in 0.1f64..100.0,
        tau in 1e-6f64..1e-2,
        omega in 0.1f64..10.0,
        tol in 1e-6f64..1.0,
    ) {
        let text = format!(
            r#"
schema_version = 1
experiment = "sed_harmonic_ground"
[seeds]
master_seed = {seed}
[field]
omega_cutoff = {cutoff:e}
n_modes = {n_modes}
[particle]
mass = 1.0
tau = {tau:e}
potential = {{ kind = "harmonic", omega = {omega:e} }}
[tolerances]
energy_rel = {tol:e}
[outputs]
directory = "runs/x"
"#
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn same_seed_gives_identical_ensembles_at_any_thread_count(seed in any::<u64>(), threads in 2usize..5) {
        let a = small_ensemble(seed, 1);
        let b = small_ensemble(seed, threads);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn access_velocity_is_flow_minus_osmotic(
        path in prop::collection::vec(-5.0f64..5.0, 12..40),
        lag in 1usize..4,
        dt in 0.01f64..2.0,
    ) {
        for j in lag..path.len() - lag {
            let (v, u, va) = kinematics::pointwise_velocities(&path, j, lag, dt);
            prop_assert!((va - (v - u)).abs() <= 1e-12 * (1.0 + v.abs() + u.abs()));
        }
    }

    #[test]
    fn field_scales_with_square_root_of_hbar(seed in any::<u64>(), k in 0.1f64..10.0, t in -50.0f64..50.0) {
        let a = field::make_field(&small_field(1.0), seed).unwrap();
        let b = field::make_field(&small_field(k), seed).unwrap();
        let (ea, eb) = (a.eval_component(0, t), b.eval_component(0, t));
        prop_assert!((eb - k.sqrt() * ea).abs() <= 1e-10 * (1.0 + ea.abs()));
        prop_assert!((small_field(k).variance() - k * small_field(1.0).variance()).abs() <= 1e-12 * k);
    }

    #[test]
    fn ensemble_binary_round_trips(seed in any::<u64>()) {
        let ens = small_ensemble(seed, 1);
        let mut bytes = Vec::new();
        ens.write_binary(&mut bytes).unwrap();
        let back = TrajectoryEnsemble::read_binary(bytes.as_slice()).unwrap();
        prop_assert_eq!(back.trajectories, ens.trajectories);
        prop_assert_eq!(back.grid, ens.grid);
    }

    #[test]
    fn log_lags_are_sorted_and_bounded(lo in 1usize..20, span in 1usize..500, n in 2usize..30) {
        let hi = lo + span;
        let lags = kinematics::log_lags(lo, hi, n);
        prop_assert_eq!(lags[0], lo);
        prop_assert_eq!(*lags.last().unwrap(), hi);
        prop_assert!(lags.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn diffusion_estimates_are_nonnegative(seed in any::<u64>()) {
        let ens = small_ensemble(seed, 1);
        let cg = CoarseGrainSpec {
            min_count: 2,
            ..CoarseGrainSpec::new(0.4, BinSpec { x_min: -3.0, x_max: 3.0, n_bins: 6 }, (0.0, 40.0))
        };
        let d = kinematics::estimate_d(&ens, &cg).unwrap();
        prop_assert!(d.pooled.mean >= 0.0 && d.raw.mean >= 0.0);
        prop_assert!(d.raw.mean >= d.pooled.mean - 1e-12);
    }
}
