//! Auxiliary-variable Gibbs sampling for the prior and for the
//! compressed-sensing posterior.

mod chain;
mod scales;
mod system;

pub use chain::{
    run_prior_chain, run_restoration_chain, sample_noise_precision, sample_noise_precision_from_residual,
    ChainDiagnostics, ChainOptions, GibbsChainState, IterationRecord, RestorationOutput, MIN_RESIDUAL_SQ,
};
pub use scales::{sample_scales_given_x, AuxiliaryField};
pub use system::{
    build_posterior_system, posterior_mean, sample_x_given_z, LinearGaussianSystem, Measurements, PreparedSystem,
    SolverMethod, SolverOptions, DENSE_LIMIT,
};
