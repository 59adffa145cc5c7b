//! Statistical analysis of shot batches and the curve fits used to calibrate
//! the experiment.

mod fits;
mod lm;
mod squeezing;
mod stats;

pub use fits::{
    fit_exponential_decay, fit_gaussian_profile, fit_mors_polarization, fit_noise_vs_power, gaussian_profile,
    FitResult,
};
pub use lm::{levenberg_marquardt, LmOptions, LmSolution};
pub use squeezing::{
    calibrate_pn_from_tss, conditional_variance, conditional_variance_of, squeezing_metric, squeezing_metric_with,
    PnCalibration, SqueezingOptions, SqueezingResult,
};
pub use stats::{covariance, mean, variance};
