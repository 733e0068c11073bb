use std::fmt::Write as _;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::scales::{sample_scales_given_x, AuxiliaryField};
use super::system::{build_posterior_system, Measurements, PreparedSystem, SolverOptions};
use crate::error::{Error, Result};
use crate::prior::{log_prior_exponent, PriorModel};
use crate::rng::ChainRng;
use crate::sensing::{unvec_image, vec_image, MeasurementOperator};

/// Residual norms² below this are clamped before the Gamma draw.
pub const MIN_RESIDUAL_SQ: f64 = 1e-12;

/// Current state of one Gibbs chain.
#[derive(Debug, Clone)]
pub struct GibbsChainState {
    pub x: Array2<f64>,
    pub z: AuxiliaryField,
    /// σ_n⁻².
    pub noise_precision: f64,
    pub iteration: usize,
    pub rng: ChainRng,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainOptions {
    pub iterations: usize,
    pub burn_in: usize,
    pub solver: SolverOptions,
    /// Return the final sample instead of the post-burn-in average.
    pub last_sample: bool,
    /// Start from uniform noise in [0, 1] instead of the back-projection Aᵀy.
    pub random_init: bool,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self {
            iterations: 200,
            burn_in: 100,
            solver: SolverOptions::default(),
            last_sample: false,
            random_init: false,
        }
    }
}

impl ChainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::invalid(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations, self.burn_in
            )));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub residual_sq: f64,
    pub exponent: f64,
    pub noise_precision: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChainDiagnostics {
    pub records: Vec<IterationRecord>,
}

impl ChainDiagnostics {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,residual_sq,exponent,noise_precision\n");
        for r in &self.records {
            writeln!(
                out,
                "{},{:e},{:e},{:e}",
                r.iteration, r.residual_sq, r.exponent, r.noise_precision
            )
            .expect("string write");
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct RestorationOutput {
    pub image: Array2<f64>,
    pub state: GibbsChainState,
    pub diagnostics: ChainDiagnostics,
}

fn residual_sq(operator: &MeasurementOperator, y: ArrayView1<'_, f64>, x: ArrayView2<'_, f64>) -> f64 {
    let ax = operator.apply(vec_image(x).view());
    y.iter().zip(ax.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// σ_n⁻² ~ Gamma(shape = M/2 + 1, scale = 2/‖r‖²) for a residual of squared norm `residual_sq`.
pub fn sample_noise_precision_from_residual(num_measurements: usize, residual_sq: f64, rng: &mut ChainRng) -> f64 {
    let r2 = residual_sq.max(MIN_RESIDUAL_SQ);
    let gamma = Gamma::new(num_measurements as f64 / 2.0 + 1.0, 2.0 / r2).expect("positive gamma parameters");
    gamma.sample(rng)
}

pub fn sample_noise_precision(
    y: ArrayView1<'_, f64>,
    operator: &MeasurementOperator,
    x: ArrayView2<'_, f64>,
    rng: &mut ChainRng,
) -> Result<f64> {
    if y.len() != operator.rows() || x.len() != operator.cols() {
        return Err(Error::invalid("measurement, operator and image dimensions disagree"));
    }
    Ok(sample_noise_precision_from_residual(y.len(), residual_sq(operator, y, x), rng))
}

/// Auxiliary-variable Gibbs sampler for the CS posterior: alternately draws
/// the scale field, the image and the noise precision. The restoration is
/// the average of post-burn-in image samples (or the final sample).
pub fn run_restoration_chain(
    model: &PriorModel,
    operator: &MeasurementOperator,
    y: ArrayView1<'_, f64>,
    shape: (usize, usize),
    options: &ChainOptions,
    rng: &mut ChainRng,
) -> Result<RestorationOutput> {
    options.validate()?;
    if shape.0 * shape.1 != operator.cols() || y.len() != operator.rows() {
        return Err(Error::invalid(format!(
            "image {}x{}, operator {}x{} and {} measurements are inconsistent",
            shape.0,
            shape.1,
            operator.rows(),
            operator.cols(),
            y.len()
        )));
    }
    let mut x = if options.random_init {
        Array2::from_shape_simple_fn(shape, || rng.random::<f64>())
    } else {
        unvec_image(operator.apply_transpose(y).view(), shape)?
    };
    let mut z = sample_scales_given_x(model, x.view(), rng)?;
    let mut noise_precision = 1.0;
    let mut sum = Array2::<f64>::zeros(shape);
    let mut kept = 0usize;
    let mut diagnostics = ChainDiagnostics::default();

    for iteration in 0..options.iterations {
        let step = |rng: &mut ChainRng, x: &Array2<f64>, precision: f64| -> Result<(AuxiliaryField, Array2<f64>, f64, f64)> {
            let z = sample_scales_given_x(model, x.view(), rng)?;
            let system = build_posterior_system(
                model,
                &z,
                Some(Measurements {
                    operator,
                    y,
                    noise_variance: 1.0 / precision,
                }),
                options.solver.ridge,
            )?;
            let x_new = PreparedSystem::new(&system, options.solver)?.sample(rng)?;
            let r2 = residual_sq(operator, y, x_new.view());
            let precision_new = sample_noise_precision_from_residual(y.len(), r2, rng);
            Ok((z, x_new, precision_new, r2))
        };
        let (z_new, x_new, precision_new, r2) = step(rng, &x, noise_precision).map_err(|e| Error::Chain {
            iteration,
            source: Box::new(e),
        })?;
        z = z_new;
        x = x_new;
        noise_precision = precision_new;
        let exponent = log_prior_exponent(model, x.view()).unwrap_or(f64::NAN);
        diagnostics.records.push(IterationRecord {
            iteration,
            residual_sq: r2,
            exponent,
            noise_precision,
        });
        if iteration >= options.burn_in {
            sum += &x;
            kept += 1;
        }
    }

    let image = if options.last_sample {
        x.clone()
    } else {
        sum / kept as f64
    };
    Ok(RestorationOutput {
        image,
        state: GibbsChainState {
            x,
            z,
            noise_precision,
            iteration: options.iterations,
            rng: rng.clone(),
        },
        diagnostics,
    })
}

/// k block-Gibbs sweeps (scales | image, then image | scales under the
/// prior alone) from each starting image.
pub fn run_prior_chain(
    model: &PriorModel,
    init: &[Array2<f64>],
    steps: usize,
    options: &SolverOptions,
    rng: &mut ChainRng,
) -> Result<Vec<Array2<f64>>> {
    if steps == 0 {
        return Err(Error::invalid("prior chain needs at least one sweep"));
    }
    options.validate()?;
    init.iter()
        .map(|start| {
            let mut x = start.clone();
            for sweep in 0..steps {
                let z = sample_scales_given_x(model, x.view(), rng)?;
                let system = build_posterior_system(model, &z, None, options.ridge)?;
                x = PreparedSystem::new(&system, *options)?
                    .sample(rng)
                    .map_err(|e| Error::Chain {
                        iteration: sweep,
                        source: Box::new(e),
                    })?;
            }
            Ok(x)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn gamma_mean_matches_shape_times_scale() {
        let mut rng = rng_from_seed(3);
        let n = 200_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| sample_noise_precision_from_residual(100, 50.0, &mut rng))
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        // Gamma(51, 0.04): mean 2.04, variance 51·0.04² = 0.0816
        let se = (0.0816f64 / n as f64).sqrt();
        assert!((mean - 2.04).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn zero_residual_is_clamped() {
        let mut rng = rng_from_seed(1);
        let v = sample_noise_precision_from_residual(10, 0.0, &mut rng);
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn doubling_residual_halves_mean() {
        let mut rng = rng_from_seed(8);
        let n = 100_000;
        let m1: f64 = (0..n).map(|_| sample_noise_precision_from_residual(40, 10.0, &mut rng)).sum::<f64>() / n as f64;
        let m2: f64 = (0..n).map(|_| sample_noise_precision_from_residual(40, 20.0, &mut rng)).sum::<f64>() / n as f64;
        assert!((m1 / m2 - 2.0).abs() < 0.02, "ratio {}", m1 / m2);
    }

    #[test]
    fn chain_options_validation() {
        let opts = ChainOptions {
            iterations: 10,
            burn_in: 10,
            ..ChainOptions::default()
        };
        assert!(opts.validate().is_err());
    }

    #[test]
    fn prior_chain_rejects_zero_steps() {
        let model = crate::prior::preset_model(crate::prior::Preset::Bcnn1, 0).unwrap();
        let init = vec![Array2::zeros((4, 4))];
        let err = run_prior_chain(&model, &init, 0, &SolverOptions::default(), &mut rng_from_seed(0)).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }
}
