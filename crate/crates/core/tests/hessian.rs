mod common;

use common::{random_params, random_samples, rng, tiny_model};
use patchqnn::hessian::{hvp, largest_eigenvalue, ModelObjective, Objective, ParameterScope, PowerIterationOptions};
use patchqnn::model::gradient;
use patchqnn::optim::AdamState;
use patchqnn_oracles::{dense_hessian, dense_hessian_from_gradient, jacobi_eigen};
use rand::Rng;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn hvp_matches_dense_hessian_columns() {
    let cfg = tiny_model(1, 1, 2, 2, 2);
    let mut r = rng(31);
    let batch = random_samples(&mut r, 6, 2, cfg.n_class());
    let params = random_params(&mut r, &cfg);
    let obj = ModelObjective::new(&cfg, batch.iter().collect(), params, ParameterScope::AnglesAndBias).unwrap();
    let theta = obj.point();
    let h = dense_hessian_from_gradient(|x| obj.gradient(x).unwrap(), &theta, 1e-4);
    for _ in 0..5 {
        let v: Vec<f64> = (0..theta.len()).map(|_| r.random_range(-1.0..1.0)).collect();
        let hv = hvp(&obj, &theta, &v).unwrap();
        let dense: Vec<f64> = h.iter().map(|row| dot(row, &v)).collect();
        let err = common::rel_err(&hv, &dense);
        assert!(err < 1e-4, "relative error {err:e}");
    }
}

#[test]
fn hvp_is_symmetric_and_linear() {
    let cfg = tiny_model(2, 1, 4, 2, 2);
    let mut r = rng(32);
    let batch = random_samples(&mut r, 5, 4, cfg.n_class());
    let params = random_params(&mut r, &cfg);
    let obj = ModelObjective::new(&cfg, batch.iter().collect(), params, ParameterScope::AnglesAndBias).unwrap();
    let theta = obj.point();
    let u: Vec<f64> = (0..theta.len()).map(|_| r.random_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..theta.len()).map(|_| r.random_range(-1.0..1.0)).collect();
    let hu = hvp(&obj, &theta, &u).unwrap();
    let hv = hvp(&obj, &theta, &v).unwrap();
    let (nu, nv) = (common::norm(&u), common::norm(&v));
    let scale = nu * nv * (common::norm(&hu) / nu).max(common::norm(&hv) / nv);
    assert!((dot(&u, &hv) - dot(&v, &hu)).abs() < 1e-6 * scale.max(1.0));
    let w: Vec<f64> = u.iter().zip(&v).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
    let hw = hvp(&obj, &theta, &w).unwrap();
    for ((x, a), b) in hw.iter().zip(&hu).zip(&hv) {
        assert!((x - (2.0 * a - 0.5 * b)).abs() < 1e-4 * common::norm(&hw).max(1.0));
    }
}

#[test]
fn power_iteration_matches_dense_top_eigenvalue_after_training() {
    let cfg = tiny_model(1, 1, 2, 2, 2);
    let mut r = rng(33);
    let batch = random_samples(&mut r, 8, 2, cfg.n_class());
    let mut params = random_params(&mut r, &cfg);
    let mut adam = AdamState::new(params.as_slice().len());
    for _ in 0..200 {
        let g = gradient(&params, &batch, &cfg).unwrap();
        adam.step(params.as_mut_slice(), g.grad.as_slice(), 1e-2).unwrap();
    }
    let obj = ModelObjective::new(&cfg, batch.iter().collect(), params, ParameterScope::AnglesAndBias).unwrap();
    assert!(obj.dim() <= 40);
    let theta = obj.point();
    let h = dense_hessian(|x| obj.loss(x).unwrap(), &theta, 1e-4);
    let (eigs, _) = jacobi_eigen(&h);
    let top = eigs.iter().copied().fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
    let opts = PowerIterationOptions {
        tol: 1e-10,
        max_iter: 2000,
        ..Default::default()
    };
    let res = largest_eigenvalue(&obj, &opts).unwrap();
    assert!(res.converged);
    let rel = (res.lambda - top).abs() / top.abs();
    assert!(rel < 1e-3, "power {} dense {top} rel {rel:e}", res.lambda);
}
