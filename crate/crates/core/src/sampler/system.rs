//! The Gaussian conditional of the image given the scale field.
//!
//! Rows of the stacked operator F are the filter responses (one block per
//! filter, variance σ_b²/δ(z) per row) followed by the measurement rows
//! (variance σ_n²). The precision is P = Fᵀ Σ⁻¹ F + εI and the right-hand
//! side is b = Fᵀ Σ⁻¹ μ with μ = (0, …, 0, y).

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand_distr::{Distribution, StandardNormal};

use super::scales::AuxiliaryField;
use crate::error::{Error, Result};
use crate::prior::conv::{correlate, correlate_add, correlate_adjoint_add, support_indices};
use crate::prior::PriorModel;
use crate::rng::ChainRng;
use crate::sensing::MeasurementOperator;

/// Largest system solved by dense Cholesky when the method is chosen automatically.
pub const DENSE_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMethod {
    DenseCholesky,
    ConjugateGradient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub method: SolverMethod,
    /// Relative residual at which conjugate gradients stops.
    pub cg_tolerance: f64,
    /// `None` means 10 × number of unknowns.
    pub cg_max_iters: Option<usize>,
    pub ridge: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: SolverMethod::DenseCholesky,
            cg_tolerance: 1e-8,
            cg_max_iters: None,
            ridge: 1e-8,
        }
    }
}

impl SolverOptions {
    /// Dense Cholesky up to [`DENSE_LIMIT`] unknowns, conjugate gradients above.
    pub fn auto(unknowns: usize) -> Self {
        let method = if unknowns <= DENSE_LIMIT {
            SolverMethod::DenseCholesky
        } else {
            SolverMethod::ConjugateGradient
        };
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cg_tolerance > 0.0) {
            return Err(Error::invalid("CG tolerance must be positive"));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::invalid("ridge must be a finite non-negative number"));
        }
        Ok(())
    }
}

/// Measurement rows of the stacked system.
#[derive(Debug, Clone, Copy)]
pub struct Measurements<'a> {
    pub operator: &'a MeasurementOperator,
    pub y: ArrayView1<'a, f64>,
    pub noise_variance: f64,
}

#[derive(Debug, Clone)]
pub struct LinearGaussianSystem<'a> {
    model: &'a PriorModel,
    shape: (usize, usize),
    offsets: Vec<(isize, isize)>,
    /// δ(z)/σ_b² for every filter row, row-major per filter.
    row_precision: Vec<Array2<f64>>,
    measurements: Option<Measurements<'a>>,
    ridge: f64,
}

pub fn build_posterior_system<'a>(
    model: &'a PriorModel,
    z: &AuxiliaryField,
    measurements: Option<Measurements<'a>>,
    ridge: f64,
) -> Result<LinearGaussianSystem<'a>> {
    if z.num_filters() != model.num_filters() || z.num_scales() != model.num_scales() {
        return Err(Error::invalid(format!(
            "scale field has {} filters x {} scales, model has {} x {}",
            z.num_filters(),
            z.num_scales(),
            model.num_filters(),
            model.num_scales()
        )));
    }
    let shape = z.shape();
    if model.num_filters() > 0 {
        crate::prior::conv::check_shape(model.footprint(), shape)?;
    }
    if !(ridge >= 0.0) {
        return Err(Error::invalid("ridge must be non-negative"));
    }
    if let Some(meas) = &measurements {
        if meas.operator.cols() != shape.0 * shape.1 {
            return Err(Error::invalid(format!(
                "operator has {} columns for a {}-pixel image",
                meas.operator.cols(),
                shape.0 * shape.1
            )));
        }
        if meas.y.len() != meas.operator.rows() {
            return Err(Error::invalid(format!(
                "measurement vector has length {}, operator has {} rows",
                meas.y.len(),
                meas.operator.rows()
            )));
        }
        if !(meas.noise_variance > 0.0 && meas.noise_variance.is_finite()) {
            return Err(Error::invalid(format!("noise variance must be positive, got {}", meas.noise_variance)));
        }
    }
    let grid = model.scale_grid();
    let row_precision = (0..model.num_filters())
        .map(|m| {
            let idx = z.filter(m);
            Array2::from_shape_fn(shape, |(i, j)| grid.precision(idx[i * shape.1 + j] as usize))
        })
        .collect();
    Ok(LinearGaussianSystem {
        model,
        shape,
        offsets: model.footprint().offsets(),
        row_precision,
        measurements,
        ridge,
    })
}

impl<'a> LinearGaussianSystem<'a> {
    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn num_unknowns(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn measurements(&self) -> Option<&Measurements<'a>> {
        self.measurements.as_ref()
    }

    /// Per-row precisions of filter block `m`.
    pub fn row_precision(&self, m: usize) -> ArrayView2<'_, f64> {
        self.row_precision[m].view()
    }

    /// Dense precision matrix P (row-major flattening of the image).
    pub fn dense_precision(&self) -> Mat<f64> {
        let n = self.num_unknowns();
        let mut p = match &self.measurements {
            Some(meas) => {
                let gram = meas.operator.gram();
                let s = 1.0 / meas.noise_variance;
                Mat::from_fn(n, n, |i, j| s * gram[(i, j)])
            }
            None => Mat::zeros(n, n),
        };
        for i in 0..n {
            p[(i, i)] += self.ridge;
        }
        let mut support = Vec::with_capacity(self.offsets.len());
        for m in 0..self.model.num_filters() {
            let taps = self.model.filter_bank().taps(m);
            let outer: Vec<f64> = taps.iter().flat_map(|a| taps.iter().map(move |b| a * b)).collect();
            let k = taps.len();
            for ((i, j), &d) in self.row_precision[m].indexed_iter() {
                support_indices(&self.offsets, self.shape, i, j, &mut support);
                for (a, &qa) in support.iter().enumerate() {
                    let col = p.col_mut(qa);
                    let col = col.try_as_col_major_mut().expect("contiguous column").as_slice_mut();
                    for (b, &qb) in support.iter().enumerate() {
                        col[qb] += d * outer[a * k + b];
                    }
                }
            }
        }
        p
    }

    /// b = Fᵀ Σ⁻¹ μ = Aᵀy / σ_n² (zero without measurements).
    pub fn rhs(&self) -> Array1<f64> {
        match &self.measurements {
            Some(meas) => meas.operator.apply_transpose(meas.y) / meas.noise_variance,
            None => Array1::zeros(self.num_unknowns()),
        }
    }

    /// Fᵀ Σ⁻¹ (μ + e) with e ~ N(0, Σ), including the ridge rows.
    pub fn perturbed_rhs(&self, rng: &mut ChainRng) -> Array1<f64> {
        let mut out = Array2::<f64>::zeros(self.shape);
        for m in 0..self.model.num_filters() {
            let noise = self.row_precision[m].mapv(|d| d.sqrt() * standard_normal(rng));
            correlate_adjoint_add(self.model.filter_bank().taps(m), &self.offsets, noise.view(), out.view_mut());
        }
        let mut out = Array1::from_iter(out);
        if let Some(meas) = &self.measurements {
            let sd = meas.noise_variance.sqrt();
            let perturbed: Array1<f64> = meas.y.iter().map(|&y| y + sd * standard_normal(rng)).collect();
            out += &(meas.operator.apply_transpose(perturbed.view()) / meas.noise_variance);
        }
        let ridge_sd = self.ridge.sqrt();
        out.iter_mut().for_each(|v| *v += ridge_sd * standard_normal(rng));
        out
    }

    /// P·v without forming P.
    pub fn apply_precision(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        let img = v.to_shape(self.shape).expect("length matches shape");
        let mut out = Array2::<f64>::zeros(self.shape);
        for m in 0..self.model.num_filters() {
            let taps = self.model.filter_bank().taps(m);
            let mut r = correlate(taps, &self.offsets, img.view());
            r *= &self.row_precision[m];
            correlate_adjoint_add(taps, &self.offsets, r.view(), out.view_mut());
        }
        let mut out = Array1::from_iter(out);
        if let Some(meas) = &self.measurements {
            let av = meas.operator.apply(v);
            out += &(meas.operator.apply_transpose(av.view()) / meas.noise_variance);
        }
        out.scaled_add(self.ridge, &v);
        out
    }

    pub fn precision_diagonal(&self) -> Array1<f64> {
        let mut diag = Array2::<f64>::from_elem(self.shape, self.ridge);
        for m in 0..self.model.num_filters() {
            let taps = self.model.filter_bank().taps(m);
            let sq: Vec<f64> = taps.iter().map(|t| t * t).collect();
            correlate_adjoint_add(&sq, &self.offsets, self.row_precision[m].view(), diag.view_mut());
        }
        let mut diag = Array1::from_iter(diag);
        if let Some(meas) = &self.measurements {
            let s = 1.0 / meas.noise_variance;
            diag.iter_mut()
                .zip(meas.operator.column_sq_norms())
                .for_each(|(d, c)| *d += s * c);
        }
        diag
    }

    /// Filter responses F_m x for every filter (used by diagnostics).
    pub fn responses(&self, x: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        (0..self.model.num_filters())
            .map(|m| {
                let mut out = Array2::zeros(self.shape);
                correlate_add(self.model.filter_bank().taps(m), &self.offsets, x, out.view_mut());
                out
            })
            .collect()
    }
}

#[inline]
fn standard_normal(rng: &mut ChainRng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

enum Factor {
    Cholesky(faer::linalg::solvers::Llt<f64>),
    Iterative,
}

/// A system made ready for repeated solves: factorized once for the dense
/// method, or held for matrix-free conjugate gradients.
pub struct PreparedSystem<'s, 'a> {
    system: &'s LinearGaussianSystem<'a>,
    options: SolverOptions,
    factor: Factor,
}

impl<'s, 'a> PreparedSystem<'s, 'a> {
    pub fn new(system: &'s LinearGaussianSystem<'a>, options: SolverOptions) -> Result<Self> {
        options.validate()?;
        let factor = match options.method {
            SolverMethod::DenseCholesky => {
                let p = system.dense_precision();
                let llt = p.llt(Side::Lower).map_err(|_| Error::NotPositiveDefinite)?;
                Factor::Cholesky(llt)
            }
            SolverMethod::ConjugateGradient => Factor::Iterative,
        };
        Ok(Self {
            system,
            options,
            factor,
        })
    }

    pub fn solve(&self, rhs: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        match &self.factor {
            Factor::Cholesky(llt) => {
                let b = faer::ColRef::from_slice(rhs.as_slice().expect("contiguous rhs"));
                let x = llt.solve(b);
                let out: Array1<f64> = x.iter().cloned().collect();
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NotPositiveDefinite);
                }
                Ok(out)
            }
            Factor::Iterative => conjugate_gradient(self.system, rhs, &self.options),
        }
    }

    /// Conditional mean P⁻¹ b.
    pub fn mean(&self) -> Result<Array2<f64>> {
        let x = self.solve(self.system.rhs().view())?;
        Ok(x.into_shape_with_order(self.system.shape).expect("shape"))
    }

    /// Exact draw from N(P⁻¹b, P⁻¹) by perturb-and-solve.
    pub fn sample(&self, rng: &mut ChainRng) -> Result<Array2<f64>> {
        let rhs = self.system.perturbed_rhs(rng);
        let x = self.solve(rhs.view())?;
        Ok(x.into_shape_with_order(self.system.shape).expect("shape"))
    }
}

/// Jacobi-preconditioned conjugate gradients on P x = rhs.
fn conjugate_gradient(system: &LinearGaussianSystem<'_>, rhs: ArrayView1<'_, f64>, options: &SolverOptions) -> Result<Array1<f64>> {
    let n = system.num_unknowns();
    let max_iters = options.cg_max_iters.unwrap_or(10 * n);
    let b_norm = rhs.dot(&rhs).sqrt();
    let mut x = Array1::<f64>::zeros(n);
    if b_norm == 0.0 {
        return Ok(x);
    }
    let inv_diag = system.precision_diagonal().mapv(|d| if d > 0.0 { 1.0 / d } else { 1.0 });
    let mut r = rhs.to_owned();
    let mut zv = &r * &inv_diag;
    let mut p = zv.clone();
    let mut rz = r.dot(&zv);
    let mut residual = 1.0;
    for _ in 0..max_iters {
        let ap = system.apply_precision(p.view());
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let alpha = rz / pap;
        x.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &ap);
        residual = r.dot(&r).sqrt() / b_norm;
        if residual < options.cg_tolerance {
            return Ok(x);
        }
        zv = &r * &inv_diag;
        let rz_next = r.dot(&zv);
        let beta = rz_next / rz;
        rz = rz_next;
        p = &zv + &(beta * &p);
    }
    Err(Error::SolverNonConvergence {
        iterations: max_iters,
        residual,
    })
}

/// Deterministic conditional mean: solves P x = b.
pub fn posterior_mean(system: &LinearGaussianSystem<'_>, options: SolverOptions) -> Result<Array2<f64>> {
    PreparedSystem::new(system, options)?.mean()
}

/// One exact draw from N(P⁻¹b, P⁻¹).
pub fn sample_x_given_z(system: &LinearGaussianSystem<'_>, options: SolverOptions, rng: &mut ChainRng) -> Result<Array2<f64>> {
    PreparedSystem::new(system, options)?.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::{FilterBank, Footprint, MixtureWeights, PriorModel, ScaleGrid};
    use crate::rng::rng_from_seed;

    fn empty_model() -> PriorModel {
        PriorModel::new(
            FilterBank::new(Footprint::Square3, vec![]).unwrap(),
            ScaleGrid::new(vec![1.0], 1.0).unwrap(),
            MixtureWeights::new(vec![]).unwrap(),
            None,
        )
        .unwrap()
    }

    fn one_filter_model(taps: Vec<f64>) -> PriorModel {
        PriorModel::new(
            FilterBank::new(Footprint::Square3, vec![taps]).unwrap(),
            ScaleGrid::new(vec![0.5, 3.0], 1.5).unwrap(),
            MixtureWeights::new(vec![vec![0.4, 0.6]]).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn identity_system() {
        let model = empty_model();
        let op = MeasurementOperator::identity(9);
        let y = Array1::from_iter((0..9).map(|v| v as f64 - 4.0));
        let z = AuxiliaryField::new(0, 1, (3, 3), vec![]).unwrap();
        let sys = build_posterior_system(
            &model,
            &z,
            Some(Measurements {
                operator: &op,
                y: y.view(),
                noise_variance: 1.0,
            }),
            0.0,
        )
        .unwrap();
        let p = sys.dense_precision();
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(p[(i, j)], if i == j { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(sys.rhs(), y);
        let mean = posterior_mean(&sys, SolverOptions::default()).unwrap();
        assert!(mean.iter().zip(y.iter()).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn dense_matches_matrix_free_product() {
        let model = one_filter_model(vec![0.1, -0.4, 0.2, 0.7, -0.3, 0.05, -0.2, 0.6, -0.75]);
        let z = AuxiliaryField::new(1, 2, (3, 4), (0..12).map(|i| (i % 2) as u16).collect()).unwrap();
        let op = crate::sensing::make_gaussian_matrix(5, 12, 3).unwrap();
        let y = Array1::from_iter((0..5).map(|v| v as f64 * 0.3));
        let sys = build_posterior_system(
            &model,
            &z,
            Some(Measurements {
                operator: &op,
                y: y.view(),
                noise_variance: 0.2,
            }),
            1e-3,
        )
        .unwrap();
        let p = sys.dense_precision();
        let diag = sys.precision_diagonal();
        for j in 0..12 {
            let mut e = Array1::zeros(12);
            e[j] = 1.0;
            let col = sys.apply_precision(e.view());
            for i in 0..12 {
                assert!((col[i] - p[(i, j)]).abs() < 1e-12);
                assert!((p[(i, j)] - p[(j, i)]).abs() < 1e-12);
            }
            assert!((diag[j] - p[(j, j)]).abs() < 1e-12);
        }
    }

    #[test]
    fn prior_only_precision_is_singular_on_constants() {
        let model = one_filter_model(crate::prior::center_taps(&[0.3, -0.1, 0.8, 0.2, -0.5, 0.4, 0.9, -0.7, 0.1]));
        let z = AuxiliaryField::new(1, 2, (4, 4), vec![1; 16]).unwrap();
        let sys = build_posterior_system(&model, &z, None, 0.0).unwrap();
        let ones = Array1::from_elem(16, 1.0);
        let p1 = sys.apply_precision(ones.view());
        assert!(p1.iter().all(|v| v.abs() < 1e-12));
        assert!(sys.rhs().iter().all(|&v| v == 0.0));
        // rank deficiency makes the unregularized dense factorization fail or blow up
        let ridged = build_posterior_system(&model, &z, None, 1e-8).unwrap();
        assert!(posterior_mean(&ridged, SolverOptions::default()).is_ok());
    }

    #[test]
    fn cg_matches_cholesky() {
        let model = one_filter_model(vec![0.2, -0.4, 0.1, 0.7, -0.3, 0.05, -0.2, 0.6, -0.75]);
        let z = AuxiliaryField::new(1, 2, (8, 8), (0..64).map(|i| ((i * 7) % 2) as u16).collect()).unwrap();
        let op = crate::sensing::make_gaussian_matrix(20, 64, 5).unwrap();
        let y = Array1::from_iter((0..20).map(|v| (v as f64).sin()));
        let sys = build_posterior_system(
            &model,
            &z,
            Some(Measurements {
                operator: &op,
                y: y.view(),
                noise_variance: 0.05,
            }),
            1e-6,
        )
        .unwrap();
        let dense = posterior_mean(&sys, SolverOptions::default()).unwrap();
        let cg = posterior_mean(
            &sys,
            SolverOptions {
                method: SolverMethod::ConjugateGradient,
                cg_tolerance: 1e-12,
                ..SolverOptions::default()
            },
        )
        .unwrap();
        let diff = (&dense - &cg).mapv(|v| v * v).sum().sqrt();
        let norm = dense.mapv(|v| v * v).sum().sqrt();
        assert!(diff / norm < 1e-6, "relative difference {}", diff / norm);
    }

    #[test]
    fn cg_reports_non_convergence() {
        let model = one_filter_model(vec![0.2, -0.4, 0.1, 0.7, -0.3, 0.05, -0.2, 0.6, -0.75]);
        let z = AuxiliaryField::new(1, 2, (8, 8), vec![0; 64]).unwrap();
        let op = crate::sensing::make_gaussian_matrix(20, 64, 5).unwrap();
        let y = Array1::from_elem(20, 1.0);
        let sys = build_posterior_system(
            &model,
            &z,
            Some(Measurements {
                operator: &op,
                y: y.view(),
                noise_variance: 0.05,
            }),
            1e-6,
        )
        .unwrap();
        let err = posterior_mean(
            &sys,
            SolverOptions {
                method: SolverMethod::ConjugateGradient,
                cg_tolerance: 1e-14,
                cg_max_iters: Some(2),
                ..SolverOptions::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::SolverNonConvergence { iterations: 2, .. }));
    }

    #[test]
    fn identity_samples_have_unit_variance_around_y() {
        let model = empty_model();
        let op = MeasurementOperator::identity(9);
        let y = Array1::from_iter((0..9).map(|v| v as f64));
        let z = AuxiliaryField::new(0, 1, (3, 3), vec![]).unwrap();
        let sys = build_posterior_system(
            &model,
            &z,
            Some(Measurements {
                operator: &op,
                y: y.view(),
                noise_variance: 1.0,
            }),
            0.0,
        )
        .unwrap();
        let prepared = PreparedSystem::new(&sys, SolverOptions::default()).unwrap();
        let mut rng = rng_from_seed(4);
        let n = 100_000;
        let mut sum = Array1::<f64>::zeros(9);
        let mut sumsq = Array1::<f64>::zeros(9);
        for _ in 0..n {
            let x = Array1::from_iter(prepared.sample(&mut rng).unwrap());
            sumsq += &(&x - &y).mapv(|v| v * v);
            sum += &x;
        }
        let nf = n as f64;
        // 18 per-coordinate checks at 4 SE, pooled variance at 3 SE
        for i in 0..9 {
            let mean = sum[i] / nf;
            assert!((mean - y[i]).abs() < 4.0 / nf.sqrt(), "mean {mean}");
            let var = sumsq[i] / nf;
            assert!((var - 1.0).abs() < 4.0 * (2.0 / nf).sqrt(), "var {var}");
        }
        let pooled = sumsq.sum() / (9.0 * nf);
        assert!((pooled - 1.0).abs() < 3.0 * (2.0 / (9.0 * nf)).sqrt(), "pooled {pooled}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let model = empty_model();
        let op = MeasurementOperator::identity(8);
        let y = Array1::zeros(8);
        let z = AuxiliaryField::new(0, 1, (3, 3), vec![]).unwrap();
        let meas = Measurements {
            operator: &op,
            y: y.view(),
            noise_variance: 1.0,
        };
        assert!(matches!(
            build_posterior_system(&model, &z, Some(meas), 0.0),
            Err(Error::InvalidInput(_))
        ));
        let other = one_filter_model(vec![0.0; 9]);
        assert!(build_posterior_system(&other, &z, None, 0.0).is_err());
    }
}
