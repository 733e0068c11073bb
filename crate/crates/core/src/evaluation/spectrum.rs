use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::prior::{MixtureActivation, PriorModel, ScaleGrid};

#[derive(Debug, Clone)]
pub enum Activation {
    Relu,
    Arctan,
    /// The mixture log activation of one filter row.
    Gmm { weights: Vec<f64>, grid: ScaleGrid },
    Zero,
}

impl Activation {
    pub fn gmm_row(model: &PriorModel, m: usize) -> Self {
        Activation::Gmm {
            weights: model.mixture_weights().row(m).to_vec(),
            grid: model.scale_grid().clone(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Arctan => "arctan",
            Activation::Gmm { .. } => "gmm",
            Activation::Zero => "zero",
        }
    }
}

/// `samples` equally spaced points on [-half_range, half_range).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumGrid {
    pub samples: usize,
    pub half_range: f64,
}

impl Default for SpectrumGrid {
    fn default() -> Self {
        Self {
            samples: 1024,
            half_range: 10.0,
        }
    }
}

impl SpectrumGrid {
    pub fn points(&self) -> Vec<f64> {
        let step = 2.0 * self.half_range / self.samples as f64;
        (0..self.samples)
            .map(|k| -self.half_range + k as f64 * step)
            .collect()
    }

    /// Frequency (cycles per unit input) of spectrum index k.
    pub fn frequency(&self, k: usize) -> f64 {
        k as f64 / (2.0 * self.half_range)
    }
}

/// |DFT| of the sampled activation for bins 0..=samples/2.
pub fn activation_spectrum(activation: &Activation, grid: &SpectrumGrid) -> Result<Vec<f64>> {
    if grid.samples < 64 || !(grid.half_range > 0.0) {
        return Err(Error::invalid("spectrum grid needs at least 64 samples over a symmetric range"));
    }
    let values: Vec<f64> = match activation {
        Activation::Relu => grid.points().into_iter().map(|t| t.max(0.0)).collect(),
        Activation::Arctan => grid.points().into_iter().map(f64::atan).collect(),
        Activation::Zero => vec![0.0; grid.samples],
        Activation::Gmm { weights, grid: scales } => {
            let act = MixtureActivation::new(weights, scales);
            grid.points().into_iter().map(|t| act.log_density(t)).collect()
        }
    };
    let mut buffer: Vec<Complex<f64>> = values.into_iter().map(|v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(grid.samples).process(&mut buffer);
    Ok(buffer[..=grid.samples / 2].iter().map(|c| c.norm()).collect())
}

/// Mean magnitude over the top quarter of frequencies (up to Nyquist).
pub fn high_band_mean(spectrum: &[f64]) -> f64 {
    let start = (spectrum.len() * 3) / 4;
    let band = &spectrum[start..];
    band.iter().sum::<f64>() / band.len() as f64
}

/// Two columns: frequency and magnitude.
pub fn spectrum_to_columns(spectrum: &[f64], grid: &SpectrumGrid) -> String {
    let mut out = String::new();
    for (k, m) in spectrum.iter().enumerate() {
        writeln!(out, "{:e} {:e}", grid.frequency(k), m).expect("string write");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_function_has_zero_spectrum() {
        let s = activation_spectrum(&Activation::Zero, &SpectrumGrid::default()).unwrap();
        assert_eq!(s.len(), 513);
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn arctan_has_negligible_dc() {
        // samples at -10 + k·step are symmetric except for the lone point at -10
        let grid = SpectrumGrid::default();
        let s = activation_spectrum(&Activation::Arctan, &grid).unwrap();
        assert!(s[0] <= 10f64.atan() + 1e-9, "DC {}", s[0]);
        assert!(s[0] < 1e-3 * s.iter().cloned().fold(0.0, f64::max) * grid.samples as f64);
    }

    #[test]
    fn relu_dominates_gmm_at_high_frequency() {
        let grid = SpectrumGrid::default();
        let relu = high_band_mean(&activation_spectrum(&Activation::Relu, &grid).unwrap());
        let arctan = high_band_mean(&activation_spectrum(&Activation::Arctan, &grid).unwrap());
        let gmm = Activation::Gmm {
            weights: vec![0.2; 5],
            grid: ScaleGrid::delta1(1.0).unwrap(),
        };
        let gmm = high_band_mean(&activation_spectrum(&gmm, &grid).unwrap());
        assert!(relu > arctan && relu > gmm, "relu {relu} arctan {arctan} gmm {gmm}");
    }

    #[test]
    fn small_grids_are_rejected() {
        let grid = SpectrumGrid {
            samples: 32,
            half_range: 1.0,
        };
        assert!(activation_spectrum(&Activation::Relu, &grid).is_err());
    }
}
