#![allow(dead_code)]

use bcnn::prior::{FilterBank, Footprint, MixtureWeights, PriorModel, ScaleGrid};
use bcnn::sampler::AuxiliaryField;
use bcnn::sensing::MeasurementOperator;
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::Rng;

pub const FOOTPRINTS: [Footprint; 3] = [Footprint::Plus5, Footprint::Square3, Footprint::Square5];

/// Tap offsets written out independently of the crate's footprint tables.
pub fn offsets(footprint: Footprint) -> Vec<(isize, isize)> {
    match footprint {
        Footprint::Plus5 => vec![(-1, 0), (0, -1), (0, 0), (0, 1), (1, 0)],
        Footprint::Square3 => (0..9).map(|k| (k / 3 - 1, k % 3 - 1)).collect(),
        Footprint::Square5 => (0..25).map(|k| (k / 5 - 2, k % 5 - 2)).collect(),
    }
}

/// Dense matrix of circular correlation with `taps` on an h×w image (row-major pixels).
pub fn circulant(taps: &[f64], footprint: Footprint, h: usize, w: usize) -> DMatrix<f64> {
    let n = h * w;
    let mut f = DMatrix::zeros(n, n);
    for i in 0..h {
        for j in 0..w {
            for (&t, &(dy, dx)) in taps.iter().zip(&offsets(footprint)) {
                let r = (i as isize + dy).rem_euclid(h as isize) as usize;
                let c = (j as isize + dx).rem_euclid(w as isize) as usize;
                f[(i * w + j, r * w + c)] += t;
            }
        }
    }
    f
}

/// P = Σ_m F_mᵀ D_m F_m + AᵀA/σ² + εI and b = Aᵀy/σ², assembled densely.
pub fn dense_system(
    model: &PriorModel,
    z: &AuxiliaryField,
    measurements: Option<(&MeasurementOperator, &[f64], f64)>,
    ridge: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let (h, w) = z.shape();
    let n = h * w;
    let mut p = DMatrix::<f64>::identity(n, n) * ridge;
    let mut b = DVector::zeros(n);
    let grid = model.scale_grid();
    for m in 0..model.num_filters() {
        let f = circulant(model.filter_bank().taps(m), model.footprint(), h, w);
        let d = DVector::from_iterator(n, z.filter(m).iter().map(|&k| grid.scales()[k as usize] / grid.base_variance()));
        p += f.transpose() * DMatrix::from_diagonal(&d) * &f;
    }
    if let Some((op, y, var)) = measurements {
        let a = DMatrix::from_row_slice(op.rows(), op.cols(), op.matrix().as_slice().unwrap());
        let y = DVector::from_column_slice(y);
        p += a.transpose() * &a / var;
        b += a.transpose() * y / var;
    }
    (p, b)
}

pub fn to_dvector(x: &Array2<f64>) -> DVector<f64> {
    DVector::from_iterator(x.len(), x.iter().copied())
}

pub fn random_model<R: Rng>(rng: &mut R, footprint: Footprint, filters: usize, scales: usize) -> PriorModel {
    let taps: Vec<Vec<f64>> = (0..filters)
        .map(|_| {
            let t: Vec<f64> = (0..footprint.num_taps()).map(|_| rng.random_range(-1.0..1.0)).collect();
            bcnn::prior::center_taps(&t)
        })
        .collect();
    let mut exps: Vec<f64> = (0..scales).map(|_| rng.random_range(-4.0..4.0)).collect();
    exps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for k in 1..exps.len() {
        if exps[k] <= exps[k - 1] {
            exps[k] = exps[k - 1] + 0.1;
        }
    }
    let grid = ScaleGrid::new(exps.iter().map(|e| e.exp()).collect(), rng.random_range(0.5..2.0)).unwrap();
    let logits: Vec<Vec<f64>> = (0..filters)
        .map(|_| (0..scales).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    PriorModel::new(
        FilterBank::new(footprint, taps).unwrap(),
        grid,
        MixtureWeights::from_logits(&logits).unwrap(),
        None,
    )
    .unwrap()
}

pub fn random_field<R: Rng>(rng: &mut R, model: &PriorModel, shape: (usize, usize)) -> AuxiliaryField {
    let n = model.num_filters() * shape.0 * shape.1;
    let idx = (0..n).map(|_| rng.random_range(0..model.num_scales()) as u16).collect();
    AuxiliaryField::new(model.num_filters(), model.num_scales(), shape, idx).unwrap()
}

pub fn random_image<R: Rng>(rng: &mut R, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random::<f64>())
}

/// Mean and standard error of a series via non-overlapping batch means.
pub fn batch_mean_se(values: &[f64], batches: usize) -> (f64, f64) {
    let size = values.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| values[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}

/// Mean and standard error for independent draws.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
