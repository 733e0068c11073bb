//! Log-density (up to the partition function) of the filter-response prior
//! and its gradients.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};

use super::conv::{check_shape, correlate};
use super::model::{PriorModel, ScaleGrid};
use crate::error::{Error, Result};

/// Precomputed zero-mean Gaussian mixture for one filter:
/// log Σ_n π_n N(t; 0, σ_b²/δ(n)).
#[derive(Debug, Clone)]
pub struct MixtureActivation {
    log_coef: Vec<f64>,
    precision: Vec<f64>,
}

impl MixtureActivation {
    pub fn new(weights: &[f64], grid: &ScaleGrid) -> Self {
        let n = grid.len();
        let mut log_coef = Vec::with_capacity(n);
        let mut precision = Vec::with_capacity(n);
        for (i, &w) in weights.iter().enumerate().take(n) {
            log_coef.push(w.ln() - 0.5 * (2.0 * PI * grid.variance(i)).ln());
            precision.push(grid.precision(i));
        }
        Self { log_coef, precision }
    }

    pub fn for_filter(model: &PriorModel, m: usize) -> Self {
        Self::new(model.mixture_weights().row(m), model.scale_grid())
    }

    pub fn num_components(&self) -> usize {
        self.log_coef.len()
    }

    pub fn precisions(&self) -> &[f64] {
        &self.precision
    }

    /// Log of π_n N(t; 0, v_n) for each component.
    #[inline]
    pub fn component_logs(&self, t: f64, out: &mut [f64]) {
        let half_t2 = 0.5 * t * t;
        for ((o, &c), &p) in out.iter_mut().zip(&self.log_coef).zip(&self.precision) {
            *o = c - half_t2 * p;
        }
    }

    #[inline]
    pub fn log_density(&self, t: f64) -> f64 {
        let half_t2 = 0.5 * t * t;
        let mut max = f64::NEG_INFINITY;
        for (&c, &p) in self.log_coef.iter().zip(&self.precision) {
            max = max.max(c - half_t2 * p);
        }
        if max == f64::NEG_INFINITY {
            return max;
        }
        let sum: f64 = self
            .log_coef
            .iter()
            .zip(&self.precision)
            .map(|(&c, &p)| (c - half_t2 * p - max).exp())
            .sum();
        max + sum.ln()
    }

    /// Posterior responsibilities over components at response `t`; returns
    /// the log-density as a by-product.
    #[inline]
    pub fn responsibilities(&self, t: f64, out: &mut [f64]) -> f64 {
        self.component_logs(t, out);
        let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            out.iter_mut().for_each(|o| *o = f64::NAN);
            return max;
        }
        let mut sum = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            sum += *o;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
        max + sum.ln()
    }
}

/// log Σ_n π_n · N(t; 0, σ_b²/δ(n)), evaluated with log-sum-exp.
pub fn gmm_log_activation(t: f64, weights: &[f64], grid: &ScaleGrid) -> f64 {
    MixtureActivation::new(weights, grid).log_density(t)
}

/// Circular correlation of `image` with filter `m`.
pub fn filter_response(model: &PriorModel, image: ArrayView2<'_, f64>, m: usize) -> Result<Array2<f64>> {
    check_shape(model.footprint(), image.dim())?;
    if m >= model.num_filters() {
        return Err(Error::invalid(format!(
            "filter index {m} out of range ({} filters)",
            model.num_filters()
        )));
    }
    let offsets = model.footprint().offsets();
    Ok(correlate(model.filter_bank().taps(m), &offsets, image))
}

/// Sum over filters and positions of the log mixture activation of every
/// filter response: the log prior up to −log Z.
pub fn log_prior_exponent(model: &PriorModel, image: ArrayView2<'_, f64>) -> Result<f64> {
    check_shape(model.footprint(), image.dim())?;
    let offsets = model.footprint().offsets();
    let mut total = 0.0;
    for m in 0..model.num_filters() {
        let act = MixtureActivation::for_filter(model, m);
        let response = correlate(model.filter_bank().taps(m), &offsets, image);
        for ((i, j), &r) in response.indexed_iter() {
            let v = act.log_density(r);
            if !v.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite log activation {v} for filter {m} at ({i},{j}), response {r}"
                )));
            }
            total += v;
        }
    }
    Ok(total)
}

/// Gradients of [`log_prior_exponent`] with respect to every filter tap and
/// every unconstrained mixture parameter (the logits whose normalized
/// exponentials are the weights).
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentGradients {
    pub taps: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
}

impl ExponentGradients {
    pub fn zeros_like(model: &PriorModel) -> Self {
        Self {
            taps: vec![vec![0.0; model.footprint().num_taps()]; model.num_filters()],
            logits: vec![vec![0.0; model.num_scales()]; model.num_filters()],
        }
    }

    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.taps.iter_mut().zip(&other.taps) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
        for (a, b) in self.logits.iter_mut().zip(&other.logits) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
    }

    pub fn norm(&self) -> f64 {
        self.taps
            .iter()
            .chain(&self.logits)
            .flatten()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

pub fn exponent_gradients(model: &PriorModel, image: ArrayView2<'_, f64>) -> Result<ExponentGradients> {
    check_shape(model.footprint(), image.dim())?;
    let (h, w) = image.dim();
    let offsets = model.footprint().offsets();
    let mut grads = ExponentGradients::zeros_like(model);
    let mut gamma = vec![0.0; model.num_scales()];
    for m in 0..model.num_filters() {
        let act = MixtureActivation::for_filter(model, m);
        let weights = model.mixture_weights().row(m);
        let response = correlate(model.filter_bank().taps(m), &offsets, image);
        // d/dr of the log activation at every position
        let mut slope = Array2::<f64>::zeros((h, w));
        let logit_grad = &mut grads.logits[m];
        for (s, &r) in slope.iter_mut().zip(response.iter()) {
            act.responsibilities(r, &mut gamma);
            let mut mean_prec = 0.0;
            for ((g, &pi), (lg, &p)) in gamma
                .iter()
                .zip(weights)
                .zip(logit_grad.iter_mut().zip(act.precisions()))
            {
                *lg += g - pi;
                mean_prec += g * p;
            }
            *s = -r * mean_prec;
        }
        // dr(p)/dt_k = x[p + offset_k]
        for (k, &(dy, dx)) in offsets.iter().enumerate() {
            let mut acc = 0.0;
            for i in 0..h {
                let src = image.row((i as isize + dy).rem_euclid(h as isize) as usize);
                let srow = slope.row(i);
                for j in 0..w {
                    acc += srow[j] * src[(j as isize + dx).rem_euclid(w as isize) as usize];
                }
            }
            grads.taps[m][k] = acc;
        }
    }
    Ok(grads)
}
