use mtgp_core::kernel::{kernel_matrix, KernelKind, ScalarKernelSpec};
use mtgp_core::params::ParamRole;
use mtgp_core::training::{
    median_pairwise_distances, train_gp, train_mtgp, CoregionFamily, GpTrainSpec, MtgpTrainSpec, TrainConfig,
};
use mtgp_core::MultiTaskDataset;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Inputs uniform on [0, 1] and targets drawn from the known prior through
/// its Cholesky factor.
fn sample_known_gp(kind: KernelKind, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 40;
    let x = DMatrix::from_fn(n, 1, |_, _| rng.random_range(0.0..1.0));
    let k = ScalarKernelSpec::new(kind, &[0.2], 1.0).unwrap();
    let mut cov = kernel_matrix(&k, &x, &x).unwrap();
    for i in 0..n {
        cov[(i, i)] += 1e-4;
    }
    let l = cov.cholesky().unwrap().l();
    let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    (x, l * z)
}

fn recovers_lengthscale(kind: KernelKind) {
    for seed in 0..5 {
        let (x, y) = sample_known_gp(kind, 100 + seed);
        let config = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let gp = train_gp(
            &GpTrainSpec {
                kernel_kind: kind,
                ..GpTrainSpec::default()
            },
            &x,
            &y,
            &config,
        )
        .unwrap();
        let err = gp.model.hyper.kernel.log_lengthscales[0] - 0.2f64.ln();
        assert!(err.abs() < 0.5, "{kind:?} seed {seed}: log lengthscale off by {err}");

        let ds = MultiTaskDataset::single_task(x, y).unwrap();
        let spec = MtgpTrainSpec {
            kernel_kind: kind,
            ..MtgpTrainSpec::default()
        };
        let mt = train_mtgp(&spec, &ds, &config).unwrap();
        let err = mt.model.hyper.kernel.terms[0].kernel.log_lengthscales[0] - 0.2f64.ln();
        assert!(
            err.abs() < 0.5,
            "{kind:?} seed {seed} (multi-task): log lengthscale off by {err}"
        );
    }
}

#[test]
fn squared_exponential_generator_is_recovered() {
    recovers_lengthscale(KernelKind::SquaredExponential);
}

#[test]
fn matern52_generator_is_recovered() {
    recovers_lengthscale(KernelKind::Matern52);
}

#[test]
fn pure_noise_is_attributed_to_noise() {
    for seed in 0..8 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(30, 1, |_, _| rng.random_range(0.0..1.0));
        let y = DVector::from_fn(30, |_, _| StandardNormal.sample(&mut rng));
        let gp = train_gp(
            &GpTrainSpec::default(),
            &x,
            &y,
            &TrainConfig {
                seed,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let s2 = gp.model.standardization.scale.powi(2);
        let noise = gp.model.hyper.noise_variance() * s2;
        let signal = gp.model.hyper.kernel.signal_variance() * s2;
        let mean = y.mean();
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 29.0;
        assert!(
            noise > var / 2.0 && noise < var * 2.0,
            "seed {seed}: noise {noise} vs sample variance {var}"
        );
        assert!(signal < noise, "seed {seed}: signal {signal} not below noise {noise}");
    }
}

fn two_task_dataset(seed: u64) -> MultiTaskDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = DMatrix::from_fn(8, 1, |_, _| rng.random_range(0.0..1.0));
    let x1 = DMatrix::from_fn(12, 1, |_, _| rng.random_range(0.0..1.0));
    let f = |x: f64| (6.0 * x).sin();
    let y0 = DVector::from_fn(8, |i, _| f(x0[i]));
    let y1 = DVector::from_fn(12, |i, _| 3.0 * f(x1[i]) + 10.0 + 0.5 * x1[i]);
    MultiTaskDataset::new(vec![x0, x1], vec![y0, y1]).unwrap()
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let ds = two_task_dataset(1);
    let config = TrainConfig {
        seed: 77,
        max_iterations: 300,
        ..TrainConfig::default()
    };
    let spec = MtgpTrainSpec::default();
    let a = train_mtgp(&spec, &ds, &config).unwrap();
    let b = train_mtgp(&spec, &ds, &config).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let c = pool.install(|| train_mtgp(&spec, &ds, &config).unwrap());
    assert_eq!(a.model.hyper, b.model.hyper);
    assert_eq!(a.model.hyper, c.model.hyper);
    assert_eq!(a.report.best_restart, c.report.best_restart);
}

#[test]
fn each_run_improves_and_best_so_far_is_monotone() {
    let ds = two_task_dataset(2);
    for family in [CoregionFamily::Slfm, CoregionFamily::Lmc, CoregionFamily::Independent] {
        let spec = MtgpTrainSpec {
            family,
            ..MtgpTrainSpec::default()
        };
        let out = train_mtgp(
            &spec,
            &ds,
            &TrainConfig {
                max_iterations: 200,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        for r in &out.report.restarts {
            assert!(r.final_objective.unwrap() >= r.initial_objective.unwrap());
        }
        let best = out.report.best_so_far();
        assert!(best.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(*best.last().unwrap(), out.report.best_objective);
        // the returned model is the winning restart, refitted
        assert!((out.model.log_marginal_likelihood() - out.report.best_objective).abs() < 1e-6);
    }
}

#[test]
fn winner_is_first_restart_with_highest_objective() {
    let ds = two_task_dataset(3);
    let out = train_mtgp(
        &MtgpTrainSpec::default(),
        &ds,
        &TrainConfig {
            max_iterations: 100,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let finals: Vec<f64> = out.report.restarts.iter().map(|r| r.final_objective.unwrap()).collect();
    let best = finals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let first = finals.iter().position(|f| *f == best).unwrap();
    assert_eq!(out.report.best_restart, first);
}

#[test]
fn zero_iterations_return_the_initialization() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = DMatrix::from_fn(10, 2, |_, _| rng.random_range(0.0..1.0));
    let y = DVector::from_fn(10, |i, _| x[(i, 0)] - x[(i, 1)]);
    let config = TrainConfig {
        max_iterations: 0,
        num_restarts: 1,
        ..TrainConfig::default()
    };
    let gp = train_gp(&GpTrainSpec::default(), &x, &y, &config).unwrap();
    let median = median_pairwise_distances(&x);
    let log_median: Vec<f64> = median.iter().map(|m| m.ln()).collect();
    assert_eq!(gp.model.hyper.kernel.log_lengthscales, log_median);
    // unit variance after standardization, up to rounding
    assert!(gp.model.hyper.kernel.log_signal_variance.abs() < 1e-12);
    assert!((gp.model.hyper.noise_variance() - 0.01).abs() < 1e-14);
    assert_eq!(gp.report.restarts[0].iterations, 0);
    assert_eq!(
        gp.report.restarts[0].initial_objective,
        gp.report.restarts[0].final_objective
    );
}

#[test]
fn independent_family_keeps_tasks_uncoupled() {
    let ds = two_task_dataset(5);
    let spec = MtgpTrainSpec {
        family: CoregionFamily::Independent,
        ..MtgpTrainSpec::default()
    };
    let out = train_mtgp(
        &spec,
        &ds,
        &TrainConfig {
            max_iterations: 200,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    for b in out.model.hyper.kernel.coregionalization_matrices() {
        assert_eq!(b[(0, 1)], 0.0);
        assert_eq!(b[(1, 0)], 0.0);
    }
    assert!(out
        .report
        .schema
        .entries
        .iter()
        .all(|r| !matches!(r, ParamRole::LogSignalVariance { .. })));
}

#[test]
fn trained_parameters_stay_positive_and_above_floor() {
    let ds = two_task_dataset(6);
    let config = TrainConfig {
        noise_floor: 1e-6,
        max_iterations: 300,
        record_trace: true,
        ..TrainConfig::default()
    };
    let out = train_mtgp(
        &MtgpTrainSpec {
            family: CoregionFamily::Lmc,
            ..MtgpTrainSpec::default()
        },
        &ds,
        &config,
    )
    .unwrap();
    let h = &out.model.hyper;
    assert!(h.noise_variances().iter().all(|v| *v >= 1e-6 * (1.0 - 1e-12)));
    for t in &h.kernel.terms {
        assert!(t.kernel.lengthscales().iter().all(|l| *l > 0.0 && l.is_finite()));
        assert!(t.task_variances().iter().all(|g| *g > 0.0));
    }
    assert!(!out.report.trace.is_empty());
    assert!(out
        .report
        .trace
        .iter()
        .all(|r| r.objective.is_finite() && r.grad_norm >= 0.0));
}

#[test]
fn invalid_config_is_rejected() {
    let ds = two_task_dataset(7);
    let bad = TrainConfig {
        num_restarts: 0,
        ..TrainConfig::default()
    };
    assert!(train_mtgp(&MtgpTrainSpec::default(), &ds, &bad).is_err());
}
