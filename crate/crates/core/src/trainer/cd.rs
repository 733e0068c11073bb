//! Contrastive-divergence learning of filter taps and mixture weights.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;

use super::patches::PatchDataset;
use crate::error::{Error, Result};
use crate::evaluation::{data_model_kld, DEFAULT_BINS};
use crate::prior::{center_taps, exponent_gradients, log_prior_exponent, ExponentGradients, MixtureWeights, PriorModel};
use crate::rng::{derive_seed, rng_from_seed, ChainRng};
use crate::sampler::{run_prior_chain, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub cd_steps: usize,
    /// Stop once an epoch moves the parameters by less than this (L2).
    pub stop_threshold: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub solver: SolverOptions,
    /// Keep the negative chains alive between updates instead of restarting
    /// them at each data batch.
    pub persistent: bool,
    /// Return the epoch with the lowest held-out KLD instead of the last one.
    pub model_selection: bool,
    pub holdout_fraction: f64,
    /// Held-out patches used per KLD evaluation (at most).
    pub selection_patches: usize,
    /// Prior-chain sweeps per KLD evaluation.
    pub selection_sweeps: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 64,
            cd_steps: 1,
            stop_threshold: 1e-5,
            max_epochs: 20,
            seed: 0,
            solver: SolverOptions::default(),
            persistent: false,
            model_selection: true,
            holdout_fraction: 0.1,
            selection_patches: 256,
            selection_sweeps: 10,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::invalid(format!(
                "learning rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        self.validate_step()?;
        if !(self.stop_threshold > 0.0) {
            return Err(Error::invalid("stop threshold must be positive"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::invalid("hold-out fraction must lie in (0, 1)"));
        }
        if self.model_selection && (self.selection_patches == 0 || self.selection_sweeps == 0) {
            return Err(Error::invalid("model selection needs at least one patch and one sweep"));
        }
        Ok(())
    }

    /// Checks needed by a single update; η = 0 is allowed here and is a no-op.
    fn validate_step(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.cd_steps == 0 {
            return Err(Error::invalid("CD needs at least one sweep"));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateNorms {
    /// L2 norm of the change in taps and logits.
    pub parameter_change: f64,
    pub data_gradient: f64,
    pub model_gradient: f64,
    /// Batch means of the log-prior exponent.
    pub data_exponent: f64,
    pub model_exponent: f64,
}

/// Unconstrained parameters: taps then log-weights, flattened.
fn parameter_vector(model: &PriorModel) -> Vec<f64> {
    let mut v: Vec<f64> = model.filter_bank().filters().iter().flatten().copied().collect();
    v.extend(model.mixture_weights().logits().into_iter().flatten());
    v
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_gradients(model: &PriorModel, images: &[Array2<f64>]) -> Result<(ExponentGradients, f64)> {
    if images.is_empty() {
        return Err(Error::invalid("gradient average over an empty batch"));
    }
    let mut acc = ExponentGradients::zeros_like(model);
    let mut exponent = 0.0;
    let scale = 1.0 / images.len() as f64;
    for img in images {
        // Zero-mean filters ignore the mean level, but chain samples carry a
        // huge one (variance 1/ridge) that would swamp the tap gradients.
        let mean = img.mean().unwrap_or(0.0);
        let img = img.mapv(|v| v - mean);
        acc.add_scaled(&exponent_gradients(model, img.view())?, scale);
        exponent += log_prior_exponent(model, img.view())? * scale;
    }
    Ok((acc, exponent))
}

/// θ ← θ + η(⟨∇⟩_data − ⟨∇⟩_model), then re-center taps and renormalize the
/// weights through their logits.
pub fn contrastive_step(
    model: &PriorModel,
    data: &[Array2<f64>],
    negatives: &[Array2<f64>],
    learning_rate: f64,
) -> Result<(PriorModel, UpdateNorms)> {
    let (data_grad, data_exponent) = mean_gradients(model, data)?;
    let (model_grad, model_exponent) = mean_gradients(model, negatives)?;
    let mut norms = UpdateNorms {
        parameter_change: 0.0,
        data_gradient: data_grad.norm(),
        model_gradient: model_grad.norm(),
        data_exponent,
        model_exponent,
    };
    if learning_rate == 0.0 || data_grad == model_grad {
        return Ok((model.clone(), norms));
    }
    let mut step = data_grad;
    step.add_scaled(&model_grad, -1.0);

    let filters: Vec<Vec<f64>> = model
        .filter_bank()
        .filters()
        .iter()
        .zip(&step.taps)
        .map(|(taps, g)| {
            let moved: Vec<f64> = taps.iter().zip(g).map(|(t, d)| t + learning_rate * d).collect();
            center_taps(&moved)
        })
        .collect();
    let logits: Vec<Vec<f64>> = model
        .mixture_weights()
        .logits()
        .iter()
        .zip(&step.logits)
        .map(|(row, g)| row.iter().zip(g).map(|(l, d)| l + learning_rate * d).collect())
        .collect();
    let updated = model.with_parameters(filters, MixtureWeights::from_logits(&logits)?)?;
    let after = parameter_vector(&updated);
    if after.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite parameters after a CD update".into()));
    }
    norms.parameter_change = distance(&parameter_vector(model), &after);
    Ok((updated, norms))
}

/// One CD-k update: negatives come from k prior-chain sweeps started at the
/// data batch.
pub fn cd_update(
    model: &PriorModel,
    batch: &[Array2<f64>],
    config: &TrainingConfig,
    rng: &mut ChainRng,
) -> Result<(PriorModel, UpdateNorms)> {
    config.validate_step()?;
    if batch.is_empty() {
        return Err(Error::invalid("CD update on an empty batch"));
    }
    let negatives = run_prior_chain(model, batch, config.cd_steps, &config.solver, rng)?;
    contrastive_step(model, batch, &negatives, config.learning_rate)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub parameter_change: f64,
    pub data_exponent: f64,
    pub model_exponent: f64,
    pub heldout_kld: Option<f64>,
}

/// Per-epoch records. Wall times are kept separately so the CSV is
/// reproducible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTrace {
    pub records: Vec<EpochRecord>,
    pub wall_seconds: Vec<f64>,
    /// KLD of the initial model, when model selection is on.
    pub initial_kld: Option<f64>,
}

impl TrainingTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,parameter_change,data_exponent,model_exponent,heldout_kld\n");
        for r in &self.records {
            let kld = r.heldout_kld.map_or_else(String::new, |v| format!("{v:e}"));
            writeln!(
                out,
                "{},{:e},{:e},{:e},{}",
                r.epoch, r.parameter_change, r.data_exponent, r.model_exponent, kld
            )
            .expect("string write");
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub model: PriorModel,
    pub trace: TrainingTrace,
    /// Epoch of the returned model (0 = initial).
    pub selected_epoch: usize,
    pub converged: bool,
    pub holdout_indices: Vec<usize>,
}

struct Selector {
    patches: Vec<Array2<f64>>,
    seed: u64,
    sweeps: usize,
    solver: SolverOptions,
}

impl Selector {
    // same chain noise for every evaluation so epochs compare fairly
    fn score(&self, model: &PriorModel) -> Result<f64> {
        let mut rng = rng_from_seed(self.seed);
        Ok(data_model_kld(model, &self.patches, self.sweeps, DEFAULT_BINS, &self.solver, &mut rng)?
            .kld
            .nats)
    }
}

pub fn train(model: &PriorModel, dataset: &PatchDataset, config: &TrainingConfig) -> Result<TrainingOutcome> {
    train_with_observer(model, dataset, config, &mut |_, _| Ok(()))
}

/// Epoch loop over shuffled batches. `on_epoch` sees the trace and current
/// model after every epoch, so callers can persist progress before a later
/// failure.
pub fn train_with_observer(
    initial: &PriorModel,
    dataset: &PatchDataset,
    config: &TrainingConfig,
    on_epoch: &mut dyn FnMut(&TrainingTrace, &PriorModel) -> Result<()>,
) -> Result<TrainingOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let mut trace = TrainingTrace::default();
    if config.max_epochs == 0 {
        return Ok(TrainingOutcome {
            model: initial.clone(),
            trace,
            selected_epoch: 0,
            converged: false,
            holdout_indices: Vec::new(),
        });
    }

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(config.seed, "split", 0)));
    let (train_idx, holdout_idx) = if config.model_selection {
        if dataset.len() < 2 {
            return Err(Error::invalid("model selection needs at least two patches"));
        }
        let held = ((dataset.len() as f64 * config.holdout_fraction).round() as usize).clamp(1, dataset.len() - 1);
        let (t, h) = order.split_at(dataset.len() - held);
        (t.to_vec(), h.to_vec())
    } else {
        (order, Vec::new())
    };
    let selector = config.model_selection.then(|| Selector {
        patches: holdout_idx
            .iter()
            .take(config.selection_patches)
            .map(|&i| dataset.patches[i].clone())
            .collect(),
        seed: derive_seed(config.seed, "selection", 0),
        sweeps: config.selection_sweeps,
        solver: config.solver,
    });

    let mut model = initial.clone();
    let mut best = (0usize, initial.clone(), f64::INFINITY);
    if let Some(sel) = &selector {
        let kld = sel.score(&model)?;
        trace.initial_kld = Some(kld);
        best.2 = kld;
    }
    let mut chain_rng = rng_from_seed(derive_seed(config.seed, "chain", 0));
    let mut fantasy: Option<Vec<Array2<f64>>> = None;
    let mut converged = false;
    let mut current = train_idx;

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        current.shuffle(&mut rng_from_seed(derive_seed(config.seed, "shuffle", epoch as u64)));
        let before = parameter_vector(&model);
        let (mut data_exp, mut model_exp, mut batches) = (0.0, 0.0, 0usize);
        for chunk in current.chunks(config.batch_size) {
            let batch: Vec<Array2<f64>> = chunk.iter().map(|&i| dataset.patches[i].clone()).collect();
            let (next, norms) = if config.persistent {
                let starts = match fantasy.take() {
                    Some(mut f) => {
                        // the final short batch reuses a prefix of the chains
                        if f.len() < batch.len() {
                            f.extend(batch[f.len()..].iter().cloned());
                        }
                        f
                    }
                    None => batch.clone(),
                };
                let negatives = run_prior_chain(&model, &starts, config.cd_steps, &config.solver, &mut chain_rng)?;
                let used = &negatives[..batch.len().min(negatives.len())];
                let result = contrastive_step(&model, &batch, used, config.learning_rate)?;
                fantasy = Some(negatives);
                result
            } else {
                cd_update(&model, &batch, config, &mut chain_rng)?
            };
            model = next;
            data_exp += norms.data_exponent;
            model_exp += norms.model_exponent;
            batches += 1;
        }
        let change = distance(&before, &parameter_vector(&model));
        let heldout_kld = match &selector {
            Some(sel) => {
                let kld = sel.score(&model)?;
                if kld < best.2 {
                    best = (epoch, model.clone(), kld);
                }
                Some(kld)
            }
            None => None,
        };
        trace.records.push(EpochRecord {
            epoch,
            parameter_change: change,
            data_exponent: data_exp / batches as f64,
            model_exponent: model_exp / batches as f64,
            heldout_kld,
        });
        trace.wall_seconds.push(start.elapsed().as_secs_f64());
        log::info!(
            "epoch {epoch}: change {change:.3e}, held-out KLD {}",
            heldout_kld.map_or("-".into(), |v| format!("{v:.4}"))
        );
        on_epoch(&trace, &model)?;
        if change < config.stop_threshold {
            converged = true;
            break;
        }
    }

    let (selected_epoch, model) = if config.model_selection {
        (best.0, best.1)
    } else {
        (trace.records.len(), model)
    };
    Ok(TrainingOutcome {
        model,
        trace,
        selected_epoch,
        converged,
        holdout_indices: holdout_idx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::{preset_model, Preset};
    use crate::trainer::extract_patches;

    fn toy_batch(n: usize, seed: u64) -> Vec<Array2<f64>> {
        use rand::Rng;
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| Array2::from_shape_fn((6, 6), |_| rng.random::<f64>()))
            .collect()
    }

    #[test]
    fn identical_negatives_give_no_update() {
        let model = preset_model(Preset::Bcnn2, 1).unwrap();
        let batch = toy_batch(4, 2);
        let (next, norms) = contrastive_step(&model, &batch, &batch, 0.5).unwrap();
        assert_eq!(next, model);
        assert_eq!(norms.parameter_change, 0.0);
    }

    #[test]
    fn zero_learning_rate_is_bit_exact() {
        let model = preset_model(Preset::Bcnn1, 3).unwrap();
        let batch = toy_batch(3, 4);
        let config = TrainingConfig {
            learning_rate: 0.0,
            ..TrainingConfig::default()
        };
        let (next, _) = cd_update(&model, &batch, &config, &mut rng_from_seed(0)).unwrap();
        assert_eq!(next, model);
    }

    #[test]
    fn update_keeps_invariants() {
        let model = preset_model(Preset::Bcnn4, 5).unwrap();
        let batch = toy_batch(4, 6);
        let config = TrainingConfig {
            learning_rate: 0.001,
            ..TrainingConfig::default()
        };
        let (next, norms) = cd_update(&model, &batch, &config, &mut rng_from_seed(1)).unwrap();
        assert!(norms.parameter_change > 0.0);
        for taps in next.filter_bank().filters() {
            assert!(taps.iter().sum::<f64>().abs() < 1e-12);
            assert!(taps.iter().all(|v| v.is_finite()));
        }
        for row in next.mixture_weights().rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_batch_and_bad_config_are_rejected() {
        let model = preset_model(Preset::Bcnn1, 0).unwrap();
        let config = TrainingConfig::default();
        assert!(cd_update(&model, &[], &config, &mut rng_from_seed(0)).is_err());
        let bad = TrainingConfig {
            cd_steps: 0,
            ..config
        };
        assert!(cd_update(&model, &toy_batch(1, 0), &bad, &mut rng_from_seed(0)).is_err());
        assert!(TrainingConfig {
            learning_rate: 1.5,
            ..config
        }
        .validate()
        .is_err());
    }

    fn toy_dataset() -> PatchDataset {
        let img = Array2::from_shape_fn((24, 24), |(i, j)| 0.5 + 0.4 * ((i as f64) * 0.5).sin() * ((j as f64) * 0.3).cos());
        extract_patches(&[("toy".into(), img.view())], (8, 8), 4).unwrap()
    }

    #[test]
    fn zero_epochs_return_the_initial_model() {
        let model = preset_model(Preset::Bcnn2, 2).unwrap();
        let config = TrainingConfig {
            max_epochs: 0,
            ..TrainingConfig::default()
        };
        let out = train(&model, &toy_dataset(), &config).unwrap();
        assert_eq!(out.model, model);
        assert!(out.trace.records.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_traced() {
        let model = preset_model(Preset::Bcnn1, 2).unwrap();
        let config = TrainingConfig {
            max_epochs: 2,
            batch_size: 8,
            learning_rate: 0.001,
            selection_patches: 4,
            selection_sweeps: 1,
            seed: 11,
            ..TrainingConfig::default()
        };
        let ds = toy_dataset();
        let a = train(&model, &ds, &config).unwrap();
        let b = train(&model, &ds, &config).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.trace.to_csv(), b.trace.to_csv());
        assert_eq!(a.trace.records.len(), 2);
        assert!(a.selected_epoch <= 2);
        // 25 patches, 10% rounded
        assert_eq!(a.holdout_indices.len(), 3);
    }

    #[test]
    fn persistent_chains_run() {
        let model = preset_model(Preset::Bcnn1, 2).unwrap();
        let config = TrainingConfig {
            max_epochs: 1,
            batch_size: 5,
            learning_rate: 0.001,
            persistent: true,
            model_selection: false,
            ..TrainingConfig::default()
        };
        let out = train(&model, &toy_dataset(), &config).unwrap();
        assert_eq!(out.selected_epoch, 1);
        assert_ne!(out.model, model);
    }
}
