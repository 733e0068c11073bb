//! Image-quality metrics, response-histogram divergence, activation spectra
//! and the LASSO baseline.

mod histogram;
mod lasso;
mod metrics;
mod report;
mod spectrum;

pub use histogram::{
    data_model_kld, kld, pooled_responses, response_histogram, BinEdges, Histogram, KldResult, ResponseComparison,
    DEFAULT_BINS, DEFAULT_RANGE_QUANTILE, KLD_FLOOR,
};
pub use lasso::{
    ista, ista_with_step, lambda_grid, lasso_objective, soft_threshold, spectral_norm_sq, LassoOptions, LassoResult, LAMBDA_FRACTIONS,
    POWER_MAX_ITERS, POWER_TOL,
};
pub use metrics::{mse, psnr, ssim, PSNR_CAP_DB, SSIM_WINDOW};
pub use report::{build_report, Aggregate, ReportRow, RestorationReport};
pub use spectrum::{activation_spectrum, high_band_mean, spectrum_to_columns, Activation, SpectrumGrid};
