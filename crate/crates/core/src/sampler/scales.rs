use ndarray::ArrayView2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::prior::conv::{check_shape, correlate};
use crate::prior::{MixtureActivation, PriorModel};
use crate::rng::ChainRng;

/// Latent scale index for every (filter, position) pair. Indices are stored
/// zero-based: `0..num_scales`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuxiliaryField {
    num_filters: usize,
    num_scales: usize,
    shape: (usize, usize),
    indices: Vec<u16>,
}

impl AuxiliaryField {
    pub fn new(
        num_filters: usize,
        num_scales: usize,
        shape: (usize, usize),
        indices: Vec<u16>,
    ) -> Result<Self> {
        if indices.len() != num_filters * shape.0 * shape.1 {
            return Err(Error::invalid(format!(
                "{} indices for {num_filters} filters on a {}x{} image",
                indices.len(),
                shape.0,
                shape.1
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i as usize >= num_scales) {
            return Err(Error::invalid(format!("scale index {bad} out of range ({num_scales} scales)")));
        }
        Ok(Self {
            num_filters,
            num_scales,
            shape,
            indices,
        })
    }

    /// Every index set to `n`.
    pub fn constant(num_filters: usize, num_scales: usize, shape: (usize, usize), n: u16) -> Result<Self> {
        Self::new(num_filters, num_scales, shape, vec![n; num_filters * shape.0 * shape.1])
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn num_filters(&self) -> usize {
        self.num_filters
    }

    pub fn num_scales(&self) -> usize {
        self.num_scales
    }

    /// Indices of filter `m`, row-major over positions.
    pub fn filter(&self, m: usize) -> &[u16] {
        let n = self.shape.0 * self.shape.1;
        &self.indices[m * n..(m + 1) * n]
    }

    pub fn get(&self, m: usize, row: usize, col: usize) -> usize {
        self.filter(m)[row * self.shape.1 + col] as usize
    }

    pub fn as_slice(&self) -> &[u16] {
        &self.indices
    }
}

/// Draw every scale index from p(n | response) ∝ π_mn · N(response; 0, σ_b²/δ(n)).
pub fn sample_scales_given_x(model: &PriorModel, x: ArrayView2<'_, f64>, rng: &mut ChainRng) -> Result<AuxiliaryField> {
    check_shape(model.footprint(), x.dim())?;
    let offsets = model.footprint().offsets();
    let num_scales = model.num_scales();
    let mut gamma = vec![0.0; num_scales];
    let mut indices = Vec::with_capacity(model.num_filters() * x.len());
    for m in 0..model.num_filters() {
        let act = MixtureActivation::for_filter(model, m);
        let response = correlate(model.filter_bank().taps(m), &offsets, x);
        for &r in response.iter() {
            let log_norm = act.responsibilities(r, &mut gamma);
            if !log_norm.is_finite() {
                return Err(Error::Numerical(format!(
                    "all scale log-probabilities are -inf for filter {m} (response {r})"
                )));
            }
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = num_scales - 1;
            for (n, &g) in gamma.iter().enumerate() {
                acc += g;
                if u < acc {
                    pick = n;
                    break;
                }
            }
            indices.push(pick as u16);
        }
    }
    AuxiliaryField::new(model.num_filters(), num_scales, x.dim(), indices)
}
