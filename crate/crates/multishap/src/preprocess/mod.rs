//! Cohort preprocessing: vitals resampling/interpolation, heart-rate/pulse
//! cross-fill, per-patient z-normalization, KNN imputation of static
//! features, and medication encoding.

mod knn;
mod medication;
mod pipeline;
mod vitals;

pub mod io;

pub use knn::{knn_impute, knn_impute_iterative, StaticTable};
pub use pipeline::{
    preprocess_cohort, PatientPreprocessStats, PreprocessManifest, DEFAULT_KNN_K,
};
pub use medication::{encode_medication, MedicationVector, MEDICATION_GROUPS, N_MEDICATION_GROUPS};
pub use vitals::{
    cross_fill, drop_incomplete_steps, interpolate_gaps, preprocess_vitals, resample, znorm,
    RawVitals, RawVitalsSample, VitalsPipelineStats, VitalsSeries, CH_HEART_RATE, CH_PULSE,
    DEFAULT_MAX_GAP, DEFAULT_STEP_SECONDS, N_VITALS_CHANNELS, VITALS_CHANNELS,
};
