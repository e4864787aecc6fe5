use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },
    #[error("degenerate class distribution: every class needs at least one case")]
    DegenerateClassDistribution,
    #[error("prediction {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("non-finite value encountered in layer {layer}")]
    NonFinite { layer: usize },
    #[error("only one class present: {context}")]
    SingleClass { context: String },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("no usable vitals: every timestep still has a missing channel")]
    NoUsableVitals,
    #[error("rows with all features missing cannot be imputed: {0}")]
    AllMissingRow(String),
    #[error("column {0} has fewer than k observed values")]
    SparseColumn(String),
    #[error("unknown medication group: {0:?}")]
    UnknownMedicationGroup(String),
    #[error("missing modality {0:?}: model not robust against missing modalities")]
    MissingModality(String),
    #[error("{n} features exceeds the exact-enumeration cap of {cap}; use sampled mode")]
    ExactCapExceeded { n: usize, cap: usize },
    #[error("background set is empty")]
    EmptyBackground,
    #[error("modality contribution vanishes; paper-mode propagation undefined")]
    VanishingContribution,
    #[error("target prevalence {0} not achievable with this configuration")]
    UnachievablePrevalence(f64),
    #[error("class with {count} cases is too small for the requested split")]
    ClassTooSmall { count: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            got,
        }
    }
}
