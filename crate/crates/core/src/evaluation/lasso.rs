//! ℓ₁-regularized least squares by iterative soft thresholding.

use ndarray::{Array1, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::sensing::MeasurementOperator;

/// Regularization grid as multiples of ‖Aᵀy‖∞.
pub const LAMBDA_FRACTIONS: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];

pub const POWER_MAX_ITERS: usize = 2000;
pub const POWER_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    pub lambda: f64,
    pub iterations: usize,
    /// Stop early when ‖x_{k+1} − x_k‖ ≤ tol·max(‖x_k‖, 1); 0 runs every iteration.
    pub tol: f64,
}

impl LassoOptions {
    pub fn new(lambda: f64, iterations: usize) -> Self {
        Self {
            lambda,
            iterations,
            tol: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LassoResult {
    pub x: Array1<f64>,
    pub iterations: usize,
    pub step: f64,
    /// ½‖Ax − y‖² + λ‖x‖₁ after each iteration.
    pub objective: Vec<f64>,
}

/// Largest eigenvalue of AᵀA by power iteration from a fixed start vector.
/// Fails when successive Rayleigh quotients still differ by more than
/// [`POWER_TOL`] (relative) after [`POWER_MAX_ITERS`] steps.
pub fn spectral_norm_sq(operator: &MeasurementOperator) -> Result<f64> {
    let mut rng = rng_from_seed(0x5eed);
    let mut v: Array1<f64> = (0..operator.cols()).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut estimate = 0.0;
    let mut change = f64::INFINITY;
    for _ in 0..POWER_MAX_ITERS {
        let norm = v.dot(&v).sqrt();
        if norm == 0.0 {
            return Err(Error::Numerical("operator has zero norm".into()));
        }
        v /= norm;
        let w = operator.apply_transpose(operator.apply(v.view()).view());
        let next = v.dot(&w);
        if !(next > 0.0) {
            return Err(Error::Numerical("operator has zero norm".into()));
        }
        change = (next - estimate).abs() / next.abs().max(f64::MIN_POSITIVE);
        estimate = next;
        v = w;
        if change <= POWER_TOL {
            return Ok(estimate);
        }
    }
    Err(Error::SolverNonConvergence {
        iterations: POWER_MAX_ITERS,
        residual: change,
    })
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

pub fn lasso_objective(operator: &MeasurementOperator, y: ArrayView1<'_, f64>, x: ArrayView1<'_, f64>, lambda: f64) -> f64 {
    let r = operator.apply(x) - y;
    0.5 * r.dot(&r) + lambda * x.iter().map(|v| v.abs()).sum::<f64>()
}

/// ISTA from x = 0 with step 1/‖A‖², run for `options.iterations` steps.
pub fn ista(operator: &MeasurementOperator, y: ArrayView1<'_, f64>, options: &LassoOptions) -> Result<LassoResult> {
    check_inputs(operator, y, options)?;
    ista_with_step(operator, y, 1.0 / spectral_norm_sq(operator)?, options)
}

fn check_inputs(operator: &MeasurementOperator, y: ArrayView1<'_, f64>, options: &LassoOptions) -> Result<()> {
    if y.len() != operator.rows() {
        return Err(Error::invalid(format!(
            "measurement length {} differs from operator rows {}",
            y.len(),
            operator.rows()
        )));
    }
    if !(options.lambda > 0.0) || !options.lambda.is_finite() {
        return Err(Error::invalid("lambda must be finite and positive"));
    }
    Ok(())
}

/// ISTA with a precomputed step (at most 1/‖A‖² for a monotone objective).
pub fn ista_with_step(
    operator: &MeasurementOperator,
    y: ArrayView1<'_, f64>,
    step: f64,
    options: &LassoOptions,
) -> Result<LassoResult> {
    check_inputs(operator, y, options)?;
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::invalid("ISTA step must be positive"));
    }
    let mut x = Array1::zeros(operator.cols());
    let mut ax = Array1::zeros(operator.rows());
    let mut objective = Vec::new();
    let mut iterations = 0;
    for _ in 0..options.iterations {
        iterations += 1;
        let grad = operator.apply_transpose((&ax - &y).view());
        let next = (&x - &(grad * step)).mapv(|v| soft_threshold(v, step * options.lambda));
        let change = (&next - &x).mapv(|v| v * v).sum().sqrt();
        let scale = x.dot(&x).sqrt().max(1.0);
        x = next;
        ax = operator.apply(x.view());
        let r = &ax - &y;
        let value = 0.5 * r.dot(&r) + options.lambda * x.iter().map(|v| v.abs()).sum::<f64>();
        if !value.is_finite() {
            return Err(Error::Numerical(format!("ISTA diverged at iteration {iterations}")));
        }
        objective.push(value);
        if change <= options.tol * scale {
            break;
        }
    }
    Ok(LassoResult {
        x,
        iterations,
        step,
        objective,
    })
}

/// λ values for the grid, scaled by ‖Aᵀy‖∞.
pub fn lambda_grid(operator: &MeasurementOperator, y: ArrayView1<'_, f64>) -> Vec<f64> {
    let top = operator
        .apply_transpose(y)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    LAMBDA_FRACTIONS.iter().map(|f| f * top).collect()
}
