//! Measurement simulation: seeded Gaussian sensing matrices, noiseless
//! measurement and additive noise at a target SNR.
//!
//! Images are flattened row-major (`vec`) before multiplication.

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use faer::Mat;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Number of measurements for a measurement ratio over `n` unknowns.
pub fn measurements_for_ratio(ratio: f64, n: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid(format!("measurement ratio must lie in (0, 1], got {ratio}")));
    }
    Ok(((ratio * n as f64).round() as usize).max(1))
}

/// Row-major flattening.
pub fn vec_image(image: ArrayView2<'_, f64>) -> Array1<f64> {
    Array1::from_iter(image.iter().cloned())
}

pub fn unvec_image(values: ArrayView1<'_, f64>, shape: (usize, usize)) -> Result<Array2<f64>> {
    if values.len() != shape.0 * shape.1 {
        return Err(Error::invalid(format!(
            "{} values cannot fill a {}x{} image",
            values.len(),
            shape.0,
            shape.1
        )));
    }
    Ok(Array2::from_shape_vec(shape, values.to_vec()).expect("length checked"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorRef {
    /// `None` for explicitly supplied matrices that cannot be regenerated.
    pub seed: Option<u64>,
    pub rows: usize,
    pub cols: usize,
}

/// Dense M×N sensing matrix. The Gram matrix AᵀA is computed on first use
/// and cached.
#[derive(Debug)]
pub struct MeasurementOperator {
    matrix: Array2<f64>,
    seed: Option<u64>,
    gram: OnceLock<Mat<f64>>,
    col_sq_norms: OnceLock<Vec<f64>>,
}

impl Clone for MeasurementOperator {
    fn clone(&self) -> Self {
        Self::with_seed(self.matrix.clone(), self.seed)
    }
}

impl MeasurementOperator {
    pub fn from_matrix(matrix: Array2<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("measurement matrix has non-finite entries"));
        }
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::invalid("measurement matrix is empty"));
        }
        Ok(Self::with_seed(matrix, None))
    }

    fn with_seed(matrix: Array2<f64>, seed: Option<u64>) -> Self {
        Self {
            matrix: matrix.as_standard_layout().into_owned(),
            seed,
            gram: OnceLock::new(),
            col_sq_norms: OnceLock::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::with_seed(Array2::eye(n), None)
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn measurement_ratio(&self) -> f64 {
        self.rows() as f64 / self.cols() as f64
    }

    pub fn reference(&self) -> OperatorRef {
        OperatorRef {
            seed: self.seed,
            rows: self.rows(),
            cols: self.cols(),
        }
    }

    fn faer_matrix(&self) -> faer::MatRef<'_, f64> {
        faer::MatRef::from_row_major_slice(
            self.matrix.as_slice().expect("standard layout"),
            self.rows(),
            self.cols(),
        )
    }

    pub fn apply(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        assert_eq!(x.len(), self.cols(), "vector length must match the operator columns");
        let x = x.as_standard_layout();
        let out = self.faer_matrix() * faer::ColRef::from_slice(x.as_slice().expect("contiguous"));
        out.iter().copied().collect()
    }

    pub fn apply_transpose(&self, y: ArrayView1<'_, f64>) -> Array1<f64> {
        assert_eq!(y.len(), self.rows(), "vector length must match the operator rows");
        let y = y.as_standard_layout();
        let out = self.faer_matrix().transpose() * faer::ColRef::from_slice(y.as_slice().expect("contiguous"));
        out.iter().copied().collect()
    }

    /// AᵀA as a dense faer matrix.
    pub fn gram(&self) -> &Mat<f64> {
        self.gram.get_or_init(|| {
            let a = self.faer_matrix();
            a.transpose() * a
        })
    }

    /// Squared Euclidean norm of every column.
    pub fn column_sq_norms(&self) -> &[f64] {
        self.col_sq_norms.get_or_init(|| {
            let mut out = vec![0.0; self.cols()];
            for row in self.matrix.rows() {
                for (o, v) in out.iter_mut().zip(row.iter()) {
                    *o += v * v;
                }
            }
            out
        })
    }
}

/// i.i.d. N(0, 1/M) entries drawn from `seed`.
pub fn make_gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Result<MeasurementOperator> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("matrix dimensions must be positive"));
    }
    if rows > cols {
        return Err(Error::invalid(format!(
            "{rows} measurements for {cols} unknowns: measurement ratio above 1 is unsupported"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let normal = Normal::new(0.0, (1.0 / rows as f64).sqrt()).expect("valid normal");
    let data: Vec<f64> = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
    let matrix = Array2::from_shape_vec((rows, cols), data).expect("shape");
    Ok(MeasurementOperator::with_seed(matrix, Some(seed)))
}

/// Entry variance of generated operators, recorded in run manifests.
pub const ENTRY_VARIANCE: &str = "1/M";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseInfo {
    pub snr_db: f64,
    pub seed: u64,
    /// Standard deviation that was used, so the noise can be regenerated.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub operator: OperatorRef,
    pub shape: (usize, usize),
    pub y: Vec<f64>,
    pub noise: Option<NoiseInfo>,
    /// Identifier of the ground-truth image, when known.
    pub image: Option<String>,
}

impl MeasurementRecord {
    pub fn y(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.y[..])
    }

    pub fn num_measurements(&self) -> usize {
        self.y.len()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("record serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let record: Self = serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
        if record.y.len() != record.operator.rows || record.shape.0 * record.shape.1 != record.operator.cols {
            return Err(Error::malformed(path, "record dimensions are inconsistent"));
        }
        Ok(record)
    }

    /// Regenerate the operator this record was measured with.
    pub fn regenerate_operator(&self) -> Result<MeasurementOperator> {
        let seed = self
            .operator
            .seed
            .ok_or_else(|| Error::invalid("record refers to an explicit matrix that cannot be regenerated"))?;
        make_gaussian_matrix(self.operator.rows, self.operator.cols, seed)
    }

    /// The noise vector that was added, regenerated from the stored seed.
    pub fn regenerate_noise(&self) -> Option<Vec<f64>> {
        self.noise.map(|n| noise_vector(self.y.len(), n.std, n.seed))
    }
}

/// y = A·vec(x), noiseless.
pub fn measure(operator: &MeasurementOperator, image: ArrayView2<'_, f64>) -> Result<MeasurementRecord> {
    let n = image.len();
    if n != operator.cols() {
        return Err(Error::invalid(format!(
            "image has {n} pixels but the operator expects {}",
            operator.cols()
        )));
    }
    let y = operator.apply(vec_image(image).view());
    Ok(MeasurementRecord {
        operator: operator.reference(),
        shape: image.dim(),
        y: y.to_vec(),
        noise: None,
        image: None,
    })
}

fn noise_vector(len: usize, std: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..len)
        .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect()
}

/// Add i.i.d. Gaussian noise with variance ‖y‖² / (M · 10^(snr_db/10)).
pub fn add_noise_snr(record: &MeasurementRecord, snr_db: f64, seed: u64) -> Result<MeasurementRecord> {
    if !snr_db.is_finite() {
        return Err(Error::invalid(format!(
            "SNR must be finite (got {snr_db}); use the noiseless record instead"
        )));
    }
    if record.noise.is_some() {
        return Err(Error::invalid("record already carries noise"));
    }
    let energy: f64 = record.y.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::invalid("SNR is undefined for an all-zero measurement"));
    }
    let m = record.y.len() as f64;
    let std = (energy / (m * 10f64.powf(snr_db / 10.0))).sqrt();
    let noise = noise_vector(record.y.len(), std, seed);
    let mut out = record.clone();
    out.y.iter_mut().zip(&noise).for_each(|(y, n)| *y += n);
    out.noise = Some(NoiseInfo { snr_db, seed, std });
    Ok(out)
}
