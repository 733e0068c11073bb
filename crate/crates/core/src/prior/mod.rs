//! The learned Gibbs prior over images: a bank of convolution filters whose
//! responses pass through a zero-mean Gaussian-mixture log activation and are
//! summed over filters and positions.

pub mod conv;
mod energy;
mod footprint;
mod io;
mod model;

pub use energy::{
    exponent_gradients, filter_response, gmm_log_activation, log_prior_exponent, ExponentGradients,
    MixtureActivation,
};
pub use footprint::Footprint;
pub use io::{load_model, model_from_str, model_to_string, save_model};
pub use model::{
    center_taps, preset_model, preset_model_with_variance, FilterBank, MixtureWeights, Preset, PriorModel,
    ScaleGrid, DEFAULT_BASE_VARIANCE, FORMAT_VERSION, INIT_TAP_STD,
};
