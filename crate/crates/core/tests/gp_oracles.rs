use mtgp_core::gp::{gp_lml_with_grad, FitOptions, GpHyperparameters, GpModel};
use mtgp_core::kernel::kernel_matrix;
use mtgp_core::linalg::Jitter;
use mtgp_core::oracle::{dense_gp_posterior, dense_log_density};
use mtgp_core::params::{ParameterSchema, ParameterVector};
use mtgp_core::training::check_gradients;
use mtgp_core::verify::{gp_objective, random_gp_instance};
use mtgp_core::{gp_log_marginal_likelihood, ScalarKernelSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

#[test]
fn two_points_one_query_matches_dense_conditioning() {
    let k = ScalarKernelSpec::squared_exponential(&[0.7], 1.3).unwrap();
    let x = DMatrix::from_column_slice(2, 1, &[0.1, 0.6]);
    let y = DVector::from_vec(vec![0.4, -1.1]);
    let xs = DMatrix::from_column_slice(1, 1, &[0.35]);
    let hyper = GpHyperparameters::new(k.clone(), 0.05).unwrap();
    let model = GpModel::fit(hyper, x.clone(), y.clone(), &FitOptions::exact()).unwrap();
    let p = model.predict(&xs, true).unwrap();
    let (m, c) = dense_gp_posterior(&k, 0.05, &x, &y, &xs);
    assert!((p.mean[0] - m[0]).abs() < 1e-10);
    assert!((p.variance[0] - c[(0, 0)]).abs() < 1e-10);
}

#[test]
fn gradient_on_random_five_point_instance() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let mut inst = random_gp_instance(&mut rng, 5, 1, 2);
        while inst.x.nrows() != 5 {
            inst = random_gp_instance(&mut rng, 5, 1, 2);
        }
        let schema = ParameterSchema::from_model(&inst.hyper, |_| true);
        let point = ParameterVector::pack(&schema, &inst.hyper).unwrap();
        let err = check_gradients(gp_objective(&inst.hyper, &schema, &inst.x, &inst.y), &point).unwrap();
        assert!(err < 1e-4, "{err}");
    }
}

#[test]
fn public_lml_matches_internal_form() {
    let k = ScalarKernelSpec::matern52(&[0.4], 0.9).unwrap();
    let x = DMatrix::from_column_slice(3, 1, &[0.0, 0.3, 0.9]);
    let y = DVector::from_vec(vec![1.0, 0.5, -0.2]);
    let (v, g) = gp_log_marginal_likelihood(&k, 0.1, &x, &y).unwrap();
    let h = GpHyperparameters::new(k, 0.1).unwrap();
    let (v2, g2) = gp_lml_with_grad(&h, &x, &y, &Jitter::default(), false).unwrap();
    assert_eq!(v, v2);
    assert_eq!(g, g2);
    assert_eq!(g.len(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn predictions_match_dense_conditioning(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_gp_instance(&mut rng, 6, 3, 2);
        let mut hyper = inst.hyper.clone();
        hyper.mean = 0.0;
        let model = GpModel::fit(hyper.clone(), inst.x.clone(), inst.y.clone(), &FitOptions::exact()).unwrap();
        let p = model.predict(&inst.xstar, true).unwrap();
        let (m, c) = dense_gp_posterior(&hyper.kernel, hyper.noise_variance(), &inst.x, &inst.y, &inst.xstar);
        prop_assert!((&p.mean - m).abs().max() < 1e-10);
        prop_assert!(max_abs(p.covariance.as_ref().unwrap(), &c) < 1e-10);
    }

    #[test]
    fn adding_a_training_point_never_increases_variance(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_gp_instance(&mut rng, 6, 3, 2);
        let n = inst.x.nrows();
        prop_assume!(n >= 2);
        let fewer = GpModel::fit(
            inst.hyper.clone(),
            inst.x.rows(0, n - 1).into_owned(),
            inst.y.rows(0, n - 1).into_owned(),
            &FitOptions::raw(),
        ).unwrap();
        let all = GpModel::fit(inst.hyper.clone(), inst.x.clone(), inst.y.clone(), &FitOptions::raw()).unwrap();
        let v_few = fewer.predict(&inst.xstar, false).unwrap().variance;
        let v_all = all.predict(&inst.xstar, false).unwrap().variance;
        for (a, b) in v_all.iter().zip(v_few.iter()) {
            prop_assert!(*a <= b + 1e-8);
        }
    }

    #[test]
    fn lml_matches_dense_determinant_formula(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_gp_instance(&mut rng, 8, 1, 2);
        let mut k = kernel_matrix(&inst.hyper.kernel, &inst.x, &inst.x).unwrap();
        for i in 0..k.nrows() {
            k[(i, i)] += inst.hyper.noise_variance();
        }
        let dense = dense_log_density(&k, &inst.y.add_scalar(-inst.hyper.mean));
        let (v, _) = gp_lml_with_grad(&inst.hyper, &inst.x, &inst.y, &Jitter::none(), true).unwrap();
        prop_assert!((v - dense).abs() < 1e-8 * dense.abs().max(1.0));
    }

    #[test]
    fn variance_is_clamped_and_bounded_by_signal(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_gp_instance(&mut rng, 6, 3, 2);
        let model = GpModel::fit(inst.hyper.clone(), inst.x, inst.y, &FitOptions::raw()).unwrap();
        let p = model.predict(&inst.xstar, true).unwrap();
        let sf2 = inst.hyper.kernel.signal_variance();
        for (i, v) in p.variance.iter().enumerate() {
            prop_assert!(*v >= 0.0 && *v <= sf2 * (1.0 + 1e-12));
            prop_assert_eq!(p.covariance.as_ref().unwrap()[(i, i)], *v);
        }
    }
}
