//! Pooled filter-response histograms and the KL divergence between them.

use std::fmt::Write as _;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::prior::conv::{check_shape, correlate};
use crate::prior::PriorModel;
use crate::rng::ChainRng;
use crate::sampler::{run_prior_chain, SolverOptions};

pub const DEFAULT_BINS: usize = 64;
pub const DEFAULT_RANGE_QUANTILE: f64 = 0.999;
/// Mass given to empty model-side bins before taking the ratio.
pub const KLD_FLOOR: f64 = 1e-12;

/// Uniform bin edges over [-half_range, half_range].
#[derive(Debug, Clone, PartialEq)]
pub struct BinEdges {
    edges: Vec<f64>,
}

impl BinEdges {
    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!("invalid histogram range [{lo}, {hi}] with {bins} bins")));
        }
        let width = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * width).collect();
        edges[bins] = hi;
        Ok(Self { edges })
    }

    pub fn symmetric(half_range: f64, bins: usize) -> Result<Self> {
        Self::uniform(-half_range, half_range, bins)
    }

    /// Symmetric range covering the `quantile` of |values|.
    pub fn symmetric_quantile(values: &[f64], quantile: f64, bins: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("cannot choose a histogram range from no values"));
        }
        let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
        abs.sort_by(|a, b| a.total_cmp(b));
        let idx = ((quantile * abs.len() as f64).ceil() as usize).clamp(1, abs.len()) - 1;
        let half = abs[idx];
        let half = if half > 0.0 { half } else { 1e-12 };
        Self::symmetric(half, bins)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    /// Bin of `v`; values outside the range land in the end bins.
    pub fn bin_of(&self, v: f64) -> usize {
        let lo = self.edges[0];
        let hi = self.edges[self.bins()];
        let k = ((v - lo) / (hi - lo) * self.bins() as f64).floor();
        if k.is_nan() || k < 0.0 {
            0
        } else {
            (k as usize).min(self.bins() - 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    edges: BinEdges,
    masses: Vec<f64>,
}

impl Histogram {
    pub fn from_values(edges: BinEdges, values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut counts = vec![0u64; edges.bins()];
        let mut total = 0u64;
        for v in values {
            counts[edges.bin_of(v)] += 1;
            total += 1;
        }
        if total == 0 {
            return Err(Error::invalid("histogram of no values"));
        }
        let masses = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Ok(Self { edges, masses })
    }

    pub fn from_masses(edges: BinEdges, masses: Vec<f64>) -> Result<Self> {
        if masses.len() != edges.bins() {
            return Err(Error::invalid("mass count differs from bin count"));
        }
        if masses.iter().any(|&m| !(m >= 0.0)) || (masses.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("masses must be non-negative and sum to 1"));
        }
        Ok(Self { edges, masses })
    }

    pub fn edges(&self) -> &BinEdges {
        &self.edges
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Two columns: bin centre and mass.
    pub fn to_columns(&self) -> String {
        let e = self.edges.edges();
        let mut out = String::new();
        for (k, m) in self.masses.iter().enumerate() {
            writeln!(out, "{:e} {:e}", 0.5 * (e[k] + e[k + 1]), m).expect("string write");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KldResult {
    pub nats: f64,
    /// Number of bins where q was empty and floored to [`KLD_FLOOR`].
    pub floored_bins: usize,
}

/// Σ p_i ln(p_i / q_i), with empty q bins floored at [`KLD_FLOOR`].
pub fn kld(p: &Histogram, q: &Histogram) -> Result<KldResult> {
    if p.edges != q.edges {
        return Err(Error::invalid("histograms have different bin edges"));
    }
    let mut nats = 0.0;
    let mut floored_bins = 0;
    for (&pi, &qi) in p.masses.iter().zip(&q.masses) {
        let qi = if qi == 0.0 {
            floored_bins += 1;
            KLD_FLOOR
        } else {
            qi
        };
        if pi > 0.0 {
            nats += pi * (pi / qi).ln();
        }
    }
    Ok(KldResult { nats, floored_bins })
}

/// Every filter response of every image, pooled.
pub fn pooled_responses(model: &PriorModel, images: &[Array2<f64>]) -> Result<Vec<f64>> {
    if images.is_empty() {
        return Err(Error::invalid("response histogram needs at least one image"));
    }
    let offsets = model.footprint().offsets();
    let mut out = Vec::new();
    for img in images {
        check_shape(model.footprint(), img.dim())?;
        for m in 0..model.num_filters() {
            out.extend(correlate(model.filter_bank().taps(m), &offsets, img.view()).iter());
        }
    }
    Ok(out)
}

/// Histogram of all filter responses over all filters, positions and images.
pub fn response_histogram(model: &PriorModel, images: &[Array2<f64>], edges: &BinEdges) -> Result<Histogram> {
    Histogram::from_values(edges.clone(), pooled_responses(model, images)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseComparison {
    pub data: Histogram,
    pub model: Histogram,
    pub kld: KldResult,
}

/// Compare the response histogram of `data` with that of prior-chain samples
/// started from the same images (`sweeps` sweeps each). The range covers the
/// 0.999 quantile of the data responses.
pub fn data_model_kld(
    model: &PriorModel,
    data: &[Array2<f64>],
    sweeps: usize,
    bins: usize,
    solver: &SolverOptions,
    rng: &mut ChainRng,
) -> Result<ResponseComparison> {
    let data_responses = pooled_responses(model, data)?;
    let edges = BinEdges::symmetric_quantile(&data_responses, DEFAULT_RANGE_QUANTILE, bins)?;
    let data_hist = Histogram::from_values(edges.clone(), data_responses)?;
    let samples = run_prior_chain(model, data, sweeps, solver, rng)?;
    let model_hist = response_histogram(model, &samples, &edges)?;
    let kld = kld(&data_hist, &model_hist)?;
    Ok(ResponseComparison {
        data: data_hist,
        model: model_hist,
        kld,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::{FilterBank, Footprint, MixtureWeights, ScaleGrid};

    #[test]
    fn identical_histograms_have_zero_divergence() {
        let edges = BinEdges::symmetric(1.0, 4).unwrap();
        let p = Histogram::from_masses(edges.clone(), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(kld(&p, &p).unwrap().nats, 0.0);
    }

    #[test]
    fn two_bin_hand_computation() {
        let edges = BinEdges::symmetric(1.0, 2).unwrap();
        let p = Histogram::from_masses(edges.clone(), vec![0.75, 0.25]).unwrap();
        let q = Histogram::from_masses(edges, vec![0.5, 0.5]).unwrap();
        assert!((kld(&p, &q).unwrap().nats - 0.130_812_035_941_136_97).abs() < 1e-12);
    }

    #[test]
    fn empty_bins_are_floored_and_counted() {
        let edges = BinEdges::symmetric(1.0, 2).unwrap();
        let p = Histogram::from_masses(edges.clone(), vec![0.5, 0.5]).unwrap();
        let q = Histogram::from_masses(edges, vec![1.0, 0.0]).unwrap();
        let r = kld(&p, &q).unwrap();
        assert_eq!(r.floored_bins, 1);
        assert!(r.nats.is_finite() && r.nats > 0.0);
    }

    #[test]
    fn mismatched_edges_are_rejected() {
        let p = Histogram::from_masses(BinEdges::symmetric(1.0, 2).unwrap(), vec![0.5, 0.5]).unwrap();
        let q = Histogram::from_masses(BinEdges::symmetric(2.0, 2).unwrap(), vec![0.5, 0.5]).unwrap();
        assert!(kld(&p, &q).is_err());
    }

    #[test]
    fn zero_batch_is_a_point_mass_and_duplication_is_invariant() {
        let model = PriorModel::new(
            FilterBank::new(Footprint::Square3, vec![crate::prior::center_taps(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 0.0])])
                .unwrap(),
            ScaleGrid::new(vec![1.0], 1.0).unwrap(),
            MixtureWeights::uniform(1, 1),
            None,
        )
        .unwrap();
        let edges = BinEdges::symmetric(1.0, 8).unwrap();
        let zeros = vec![Array2::zeros((5, 5))];
        let h = response_histogram(&model, &zeros, &edges).unwrap();
        assert_eq!(h.masses()[edges.bin_of(0.0)], 1.0);

        let img = Array2::from_shape_fn((6, 6), |(i, j)| ((i * 6 + j) as f64 * 0.37).sin() * 0.1);
        let once = response_histogram(&model, &[img.clone()], &edges).unwrap();
        let twice = response_histogram(&model, &[img.clone(), img], &edges).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn quantile_range() {
        let values: Vec<f64> = (0..1000).map(|v| v as f64 - 500.0).collect();
        let e = BinEdges::symmetric_quantile(&values, 0.999, 64).unwrap();
        assert_eq!(e.bins(), 64);
        assert_eq!(e.edges()[64], 499.0);
        assert!(e.edges().windows(2).all(|w| w[1] > w[0]));
    }
}
