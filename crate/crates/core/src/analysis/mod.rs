//! Evaluation metrics, residual factor exposures, Shapley attribution and
//! the parameter-perturbation harness.

mod metrics;
mod perturb;
mod residual;
mod shapley;

pub use metrics::{compute_metrics, dte, error_summary, hrr, sample_std, trading_intensity, ErrorSummary, MetricsRecord};
pub use perturb::perturb_params;
pub use residual::{exposure_inputs, level_premium, residual_exposures, ExposureInputs, PathSubset, ResidualSeries, SubsetSeries};
pub use shapley::{
    marginal_background, sample_policy_inputs, shapley_attribution, shapley_values, AttributionRecord, FEATURE_NAMES,
};
