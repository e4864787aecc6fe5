//! Shapley-value attribution: exact and permutation-sampled estimators over
//! an interventional value function, modality-level aggregation, and
//! chain-rule propagation of hidden-feature attributions back to raw inputs.

mod propagate;
mod report;
mod shapley;

pub use propagate::{propagate, PropagationMode};
pub use report::{
    explain_case, global_aggregate, global_csv, modality_contribution, step1_attribution,
    step2_matrix, AttributionReport,
    ExplainConfig, GlobalContribution, GlobalModalityStat, ModalityContribution, ModalityStat,
    ReportModality, StaticFeatureAttribution,
};
pub use shapley::{
    encoder_attribution_matrix, shapley_exact, shapley_exact_vec, shapley_sampled,
    shapley_sampled_vec, value_function, AttributionMatrix, AttributionVector, BackgroundSet,
    ShapleyConfig, DEFAULT_BACKGROUND_CAP, DEFAULT_EXACT_CAP,
};
