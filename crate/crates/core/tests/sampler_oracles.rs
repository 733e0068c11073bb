mod common;

use bcnn::prior::Footprint;
use bcnn::rng::rng_from_seed;
use bcnn::sampler::{
    build_posterior_system, posterior_mean, run_prior_chain, run_restoration_chain, ChainOptions, Measurements,
    PreparedSystem, SolverMethod, SolverOptions,
};
use bcnn::sensing::{make_gaussian_matrix, measure};
use ndarray::Array1;
use rand::Rng;

#[test]
fn posterior_mean_matches_dense_solve() {
    let mut rng = rng_from_seed(11);
    for case in 0..40 {
        let fp = common::FOOTPRINTS[case % 2];
        let shape = (rng.random_range(3..7), rng.random_range(3..7));
        let n = shape.0 * shape.1;
        let (filters, scales) = (rng.random_range(1..4), rng.random_range(2..5));
        let model = common::random_model(&mut rng, fp, filters, scales);
        let z = common::random_field(&mut rng, &model, shape);
        let op = make_gaussian_matrix(rng.random_range(1..=n), n, rng.random()).unwrap();
        let truth = common::random_image(&mut rng, shape);
        let y = measure(&op, truth.view()).unwrap().y;
    let y = Array1::from(y);
        let var = 10f64.powf(rng.random_range(-3.0..0.0));
        let ridge = 1e-3;
        let system = build_posterior_system(
            &model,
            &z,
            Some(Measurements { operator: &op, y: y.view(), noise_variance: var }),
            ridge,
        )
        .unwrap();
        let ours = common::to_dvector(&posterior_mean(&system, SolverOptions { ridge, ..Default::default() }).unwrap());
        let (p, b) = common::dense_system(&model, &z, Some((&op, y.as_slice().unwrap(), var)), ridge);
        let oracle = p.lu().solve(&b).unwrap();
        let rel = (&ours - &oracle).norm() / oracle.norm();
        assert!(rel < 1e-8, "case {case}: relative error {rel}");
    }
}

#[test]
fn frozen_scales_give_uncorrelated_draws() {
    let mut rng = rng_from_seed(5);
    let model = common::random_model(&mut rng, Footprint::Square3, 2, 3);
    let z = common::random_field(&mut rng, &model, (4, 4));
    let op = make_gaussian_matrix(8, 16, 3).unwrap();
    let y = measure(&op, common::random_image(&mut rng, (4, 4)).view()).unwrap().y;
    let y = Array1::from(y);
    let system = build_posterior_system(
        &model,
        &z,
        Some(Measurements { operator: &op, y: y.view(), noise_variance: 0.1 }),
        1e-8,
    )
    .unwrap();
    let prepared = PreparedSystem::new(&system, SolverOptions::default()).unwrap();
    let n = 20_000;
    let draws: Vec<f64> = (0..n).map(|_| prepared.sample(&mut rng).unwrap()[(1, 2)]).collect();
    let (mean, _) = common::mean_se(&draws);
    let var: f64 = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let lag1: f64 = draws.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / ((n - 1) as f64 * var);
    assert!(lag1.abs() < 3.0 / (n as f64).sqrt(), "lag-1 autocorrelation {lag1}");
}

#[test]
fn cholesky_and_cg_draws_agree_for_the_same_seed() {
    let mut rng = rng_from_seed(8);
    let model = common::random_model(&mut rng, Footprint::Plus5, 2, 3);
    let z = common::random_field(&mut rng, &model, (5, 5));
    let system = build_posterior_system(&model, &z, None, 1e-2).unwrap();
    let chol = SolverOptions { ridge: 1e-2, ..Default::default() };
    let cg = SolverOptions { method: SolverMethod::ConjugateGradient, cg_tolerance: 1e-13, ..chol };
    let a = PreparedSystem::new(&system, chol).unwrap().sample(&mut rng_from_seed(1)).unwrap();
    let b = PreparedSystem::new(&system, cg).unwrap().sample(&mut rng_from_seed(1)).unwrap();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (u, v) in a.iter().zip(b.iter()) {
        assert!((u - v).abs() <= 1e-8 * scale);
    }
}

#[test]
fn identical_seeds_give_bit_identical_chains() {
    let mut rng = rng_from_seed(2);
    let model = common::random_model(&mut rng, Footprint::Square3, 2, 4);
    let image = common::random_image(&mut rng, (6, 6));
    let op = make_gaussian_matrix(12, 36, 9).unwrap();
    let y = measure(&op, image.view()).unwrap().y;
    let y = Array1::from(y);
    let options = ChainOptions { iterations: 12, burn_in: 4, ..Default::default() };
    let a = run_restoration_chain(&model, &op, y.view(), (6, 6), &options, &mut rng_from_seed(77)).unwrap();
    let b = run_restoration_chain(&model, &op, y.view(), (6, 6), &options, &mut rng_from_seed(77)).unwrap();
    assert_eq!(a.image, b.image);
    assert_eq!(a.diagnostics, b.diagnostics);
    let c = run_restoration_chain(&model, &op, y.view(), (6, 6), &options, &mut rng_from_seed(78)).unwrap();
    assert_ne!(a.image, c.image);

    let starts = vec![image.clone(), image.mapv(|v| 1.0 - v)];
    let p = run_prior_chain(&model, &starts, 3, &SolverOptions::default(), &mut rng_from_seed(4)).unwrap();
    let q = run_prior_chain(&model, &starts, 3, &SolverOptions::default(), &mut rng_from_seed(4)).unwrap();
    assert_eq!(p, q);
}
