//! Compressed-sensing restoration with a learned convolutional Gibbs prior.
//!
//! The prior is a bank of convolution filters whose responses pass through a
//! Gaussian-scale-mixture log activation ([`prior`]). It is trained with
//! contrastive divergence ([`trainer`]) and used for restoration by an
//! auxiliary-variable Gibbs sampler with exact Gaussian conditionals
//! ([`sampler`]) on simulated measurements ([`sensing`]).

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod imageio;
pub mod prior;
pub mod rng;
pub mod sampler;
pub mod sensing;
pub mod trainer;

pub use error::{Error, Result};
