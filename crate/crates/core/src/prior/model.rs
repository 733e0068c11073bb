use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};

use super::footprint::Footprint;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

pub const FORMAT_VERSION: u64 = 1;
pub const DEFAULT_BASE_VARIANCE: f64 = 1.0;

/// Standard deviation of the random taps a preset starts from.
pub const INIT_TAP_STD: f64 = 0.5;

const SIMPLEX_TOL: f64 = 1e-12;

/// A bank of convolution filters sharing one footprint. Responses are
/// always computed with circular boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    footprint: Footprint,
    filters: Vec<Vec<f64>>,
}

impl FilterBank {
    pub fn new(footprint: Footprint, filters: Vec<Vec<f64>>) -> Result<Self> {
        for (m, taps) in filters.iter().enumerate() {
            if taps.len() != footprint.num_taps() {
                return Err(Error::invalid(format!(
                    "filter {m} has {} taps, footprint {footprint} needs {}",
                    taps.len(),
                    footprint.num_taps()
                )));
            }
            if let Some(t) = taps.iter().find(|t| !t.is_finite()) {
                return Err(Error::invalid(format!("filter {m} has non-finite tap {t}")));
            }
        }
        Ok(Self { footprint, filters })
    }

    pub fn footprint(&self) -> Footprint {
        self.footprint
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn taps(&self, m: usize) -> &[f64] {
        &self.filters[m]
    }

    pub fn filters(&self) -> &[Vec<f64>] {
        &self.filters
    }

    /// Filter `m` laid out as a dense `extent × extent` kernel (zeros off-footprint).
    pub fn kernel(&self, m: usize) -> Vec<Vec<f64>> {
        let e = self.footprint.extent();
        let r = (e / 2) as isize;
        let mut kernel = vec![vec![0.0; e]; e];
        for (&(dy, dx), &t) in self.footprint.offsets().iter().zip(&self.filters[m]) {
            kernel[(dy + r) as usize][(dx + r) as usize] = t;
        }
        kernel
    }

    /// Inverse of [`FilterBank::kernel`]; rejects non-zero values off the footprint.
    pub fn taps_from_kernel(footprint: Footprint, kernel: &[Vec<f64>]) -> Result<Vec<f64>> {
        let e = footprint.extent();
        if kernel.len() != e || kernel.iter().any(|row| row.len() != e) {
            return Err(Error::invalid(format!("kernel must be {e}x{e} for {footprint}")));
        }
        for (i, row) in kernel.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !footprint.contains(i, j) && v != 0.0 {
                    return Err(Error::invalid(format!(
                        "kernel cell ({i},{j}) lies outside the {footprint} footprint"
                    )));
                }
            }
        }
        let r = (e / 2) as isize;
        Ok(footprint
            .offsets()
            .iter()
            .map(|&(dy, dx)| kernel[(dy + r) as usize][(dx + r) as usize])
            .collect())
    }
}

/// Fixed scales δ(1..N) and base variance σ_b²; component n has variance σ_b²/δ(n).
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleGrid {
    scales: Vec<f64>,
    base_variance: f64,
}

impl ScaleGrid {
    pub fn new(scales: Vec<f64>, base_variance: f64) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::invalid("scale grid is empty"));
        }
        if !(base_variance > 0.0 && base_variance.is_finite()) {
            return Err(Error::invalid(format!("base variance must be positive, got {base_variance}")));
        }
        for w in scales.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid("scales must be strictly ascending"));
            }
        }
        for &d in &scales {
            let v = base_variance / d;
            if !(d > 0.0 && d.is_finite() && v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("invalid scale {d}")));
            }
        }
        Ok(Self {
            scales,
            base_variance,
        })
    }

    /// δ₁ = exp({−7, −3, 0, 3, 7}).
    pub fn delta1(base_variance: f64) -> Result<Self> {
        Self::new([-7.0f64, -3.0, 0.0, 3.0, 7.0].iter().map(|e| e.exp()).collect(), base_variance)
    }

    /// δ₂ = exp({±7, ±5, ±3, ±1}).
    pub fn delta2(base_variance: f64) -> Result<Self> {
        Self::new(
            [-7.0f64, -5.0, -3.0, -1.0, 1.0, 3.0, 5.0, 7.0]
                .iter()
                .map(|e| e.exp())
                .collect(),
            base_variance,
        )
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn base_variance(&self) -> f64 {
        self.base_variance
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    pub fn variance(&self, n: usize) -> f64 {
        self.base_variance / self.scales[n]
    }

    /// Precision δ(n)/σ_b² of component n.
    pub fn precision(&self, n: usize) -> f64 {
        self.scales[n] / self.base_variance
    }
}

/// Per-filter mixture weights π_m over the scale grid; each row lies on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights {
    rows: Vec<Vec<f64>>,
}

impl MixtureWeights {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (m, row) in rows.iter().enumerate() {
            if row.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
                return Err(Error::invalid(format!("weight row {m} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::invalid(format!("weight row {m} sums to {sum}, not 1")));
            }
        }
        Ok(Self { rows })
    }

    pub fn uniform(num_filters: usize, num_scales: usize) -> Self {
        let w = 1.0 / num_scales as f64;
        Self {
            rows: vec![vec![w; num_scales]; num_filters],
        }
    }

    /// Normalized exponentials of each row of unconstrained parameters.
    pub fn from_logits(logits: &[Vec<f64>]) -> Result<Self> {
        let rows = logits
            .iter()
            .map(|row| {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&a| (a - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                exps.into_iter().map(|e| e / sum).collect()
            })
            .collect();
        Self::new(rows)
    }

    /// Unconstrained parameters whose normalized exponentials give these weights.
    pub fn logits(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|w| w.ln()).collect())
            .collect()
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.rows[m]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Named model configurations (footprint, number of filters, scale grid).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    Bcnn1,
    Bcnn2,
    Bcnn3,
    Bcnn4,
    Bcnn5,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Bcnn1,
        Preset::Bcnn2,
        Preset::Bcnn3,
        Preset::Bcnn4,
        Preset::Bcnn5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Bcnn1 => "bcnn1",
            Preset::Bcnn2 => "bcnn2",
            Preset::Bcnn3 => "bcnn3",
            Preset::Bcnn4 => "bcnn4",
            Preset::Bcnn5 => "bcnn5",
        }
    }

    pub fn footprint(self) -> Footprint {
        match self {
            Preset::Bcnn1 => Footprint::Plus5,
            Preset::Bcnn2 | Preset::Bcnn3 | Preset::Bcnn4 => Footprint::Square3,
            Preset::Bcnn5 => Footprint::Square5,
        }
    }

    pub fn num_filters(self) -> usize {
        match self {
            Preset::Bcnn1 | Preset::Bcnn2 => 4,
            Preset::Bcnn3 | Preset::Bcnn4 => 8,
            Preset::Bcnn5 => 24,
        }
    }

    pub fn scale_grid(self, base_variance: f64) -> Result<ScaleGrid> {
        match self {
            Preset::Bcnn1 | Preset::Bcnn2 | Preset::Bcnn3 => ScaleGrid::delta1(base_variance),
            Preset::Bcnn4 | Preset::Bcnn5 => ScaleGrid::delta2(base_variance),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown preset '{s}' (expected bcnn1..bcnn5)")))
    }
}

/// The learned Gibbs prior: filter bank, mixture weights and scale grid.
/// Immutable once built; training produces new models.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorModel {
    filter_bank: FilterBank,
    scale_grid: ScaleGrid,
    mixture_weights: MixtureWeights,
    preset_name: Option<String>,
    format_version: u64,
}

impl PriorModel {
    pub fn new(
        filter_bank: FilterBank,
        scale_grid: ScaleGrid,
        mixture_weights: MixtureWeights,
        preset_name: Option<String>,
    ) -> Result<Self> {
        if mixture_weights.len() != filter_bank.len() {
            return Err(Error::invalid(format!(
                "{} weight rows for {} filters",
                mixture_weights.len(),
                filter_bank.len()
            )));
        }
        if let Some(m) = mixture_weights
            .rows()
            .iter()
            .position(|row| row.len() != scale_grid.len())
        {
            return Err(Error::invalid(format!(
                "weight row {m} has {} entries for {} scales",
                mixture_weights.row(m).len(),
                scale_grid.len()
            )));
        }
        Ok(Self {
            filter_bank,
            scale_grid,
            mixture_weights,
            preset_name,
            format_version: FORMAT_VERSION,
        })
    }

    pub fn filter_bank(&self) -> &FilterBank {
        &self.filter_bank
    }

    pub fn scale_grid(&self) -> &ScaleGrid {
        &self.scale_grid
    }

    pub fn mixture_weights(&self) -> &MixtureWeights {
        &self.mixture_weights
    }

    pub fn preset_name(&self) -> Option<&str> {
        self.preset_name.as_deref()
    }

    pub fn format_version(&self) -> u64 {
        self.format_version
    }

    pub fn footprint(&self) -> Footprint {
        self.filter_bank.footprint()
    }

    pub fn num_filters(&self) -> usize {
        self.filter_bank.len()
    }

    pub fn num_scales(&self) -> usize {
        self.scale_grid.len()
    }

    /// Trainable parameter count: all filter taps plus all mixture weights.
    pub fn parameter_count(&self) -> usize {
        self.num_filters() * (self.footprint().num_taps() + self.num_scales())
    }

    pub fn with_parameters(&self, filters: Vec<Vec<f64>>, weights: MixtureWeights) -> Result<Self> {
        let bank = FilterBank::new(self.footprint(), filters)?;
        Self::new(bank, self.scale_grid.clone(), weights, self.preset_name.clone())
    }
}

/// Build a preset with small zero-mean random taps and uniform weights.
pub fn preset_model(preset: Preset, seed: u64) -> Result<PriorModel> {
    preset_model_with_variance(preset, seed, DEFAULT_BASE_VARIANCE)
}

pub fn preset_model_with_variance(preset: Preset, seed: u64, base_variance: f64) -> Result<PriorModel> {
    let footprint = preset.footprint();
    let mut rng = rng_from_seed(seed);
    let normal = Normal::new(0.0, INIT_TAP_STD).expect("valid normal");
    let filters = (0..preset.num_filters())
        .map(|_| {
            let taps: Vec<f64> = (0..footprint.num_taps()).map(|_| normal.sample(&mut rng)).collect();
            center_taps(&taps)
        })
        .collect();
    let grid = preset.scale_grid(base_variance)?;
    let weights = MixtureWeights::uniform(preset.num_filters(), grid.len());
    PriorModel::new(
        FilterBank::new(footprint, filters)?,
        grid,
        weights,
        Some(preset.name().to_string()),
    )
}

/// Subtract the mean tap value so the filter ignores constant images.
pub fn center_taps(taps: &[f64]) -> Vec<f64> {
    let mean = taps.iter().sum::<f64>() / taps.len() as f64;
    taps.iter().map(|t| t - mean).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_parameter_counts() {
        let counts: Vec<usize> = Preset::ALL
            .iter()
            .map(|&p| preset_model(p, 0).unwrap().parameter_count())
            .collect();
        assert_eq!(counts, vec![40, 56, 112, 136, 792]);
    }

    #[test]
    fn unknown_preset_is_rejected() {
        assert!(matches!("bcnn6".parse::<Preset>(), Err(Error::InvalidInput(_))));
        assert_eq!("BCNN4".parse::<Preset>().unwrap(), Preset::Bcnn4);
    }

    #[test]
    fn preset_scale_grids_are_exact() {
        let d1 = ScaleGrid::delta1(1.0).unwrap();
        assert_eq!(d1.scales(), &[(-7.0f64).exp(), (-3.0f64).exp(), 1.0, 3.0f64.exp(), 7.0f64.exp()]);
        let d2 = ScaleGrid::delta2(1.0).unwrap();
        assert_eq!(d2.len(), 8);
        assert_eq!(d2.scales()[0], (-7.0f64).exp());
        assert_eq!(d2.scales()[7], 7.0f64.exp());
    }

    #[test]
    fn preset_filters_are_zero_mean_and_weights_uniform() {
        let model = preset_model(Preset::Bcnn5, 3).unwrap();
        for taps in model.filter_bank().filters() {
            assert!(taps.iter().sum::<f64>().abs() < 1e-12);
        }
        for row in model.mixture_weights().rows() {
            assert!(row.iter().all(|&w| w == 1.0 / 8.0));
        }
        assert_eq!(model, preset_model(Preset::Bcnn5, 3).unwrap());
        assert_ne!(model, preset_model(Preset::Bcnn5, 4).unwrap());
    }

    #[test]
    fn grid_validation() {
        assert!(ScaleGrid::new(vec![], 1.0).is_err());
        assert!(ScaleGrid::new(vec![2.0, 1.0], 1.0).is_err());
        assert!(ScaleGrid::new(vec![-1.0, 1.0], 1.0).is_err());
        assert!(ScaleGrid::new(vec![1.0], 0.0).is_err());
    }

    #[test]
    fn weights_validation_and_softmax() {
        assert!(MixtureWeights::new(vec![vec![0.5, 0.6]]).is_err());
        assert!(MixtureWeights::new(vec![vec![-0.5, 1.5]]).is_err());
        let w = MixtureWeights::from_logits(&[vec![0.0, 0.0, 1000.0], vec![1.0, 2.0, 3.0]]).unwrap();
        for row in w.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(w.row(0)[2], 1.0);
    }

    #[test]
    fn kernel_round_trip_and_footprint_check() {
        let model = preset_model(Preset::Bcnn1, 1).unwrap();
        let k = model.filter_bank().kernel(0);
        assert_eq!(k[0][0], 0.0);
        let taps = FilterBank::taps_from_kernel(Footprint::Plus5, &k).unwrap();
        assert_eq!(taps, model.filter_bank().taps(0));
        let mut bad = k.clone();
        bad[0][0] = 1.0;
        assert!(FilterBank::taps_from_kernel(Footprint::Plus5, &bad).is_err());
    }
}
