use serde::{Deserialize, Serialize};

use crate::data::{Cohort, ProcessedRecord, N_STATIC_FEATURES};
use crate::error::{Error, Result};

use super::knn::{knn_impute, StaticTable};
use super::medication::encode_medication;
use super::vitals::{preprocess_vitals, VitalsPipelineStats};

pub const DEFAULT_KNN_K: usize = 10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientPreprocessStats {
    pub id: String,
    #[serde(flatten)]
    pub vitals: VitalsPipelineStats,
}

/// Recorded alongside the processed cohort so downstream stages can audit
/// what preprocessing changed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessManifest {
    pub n_records: usize,
    pub knn_k: usize,
    pub imputed_static_cells: usize,
    pub mean_dropped_step_fraction: f64,
    pub per_patient: Vec<PatientPreprocessStats>,
}

/// The full pipeline over a cohort: KNN static imputation (whole-table,
/// before any per-patient stage), then per patient the fixed vitals chain
/// and medication encoding.
pub fn preprocess_cohort(cohort: &Cohort, knn_k: usize) -> Result<(Vec<ProcessedRecord>, PreprocessManifest)> {
    if cohort.records.is_empty() {
        return Err(Error::EmptyInput("cohort".into()));
    }
    let columns: Vec<String> = (0..N_STATIC_FEATURES).map(|c| format!("f{c}")).collect();
    let table = StaticTable::new(
        columns,
        cohort.records.iter().map(|r| r.id.clone()).collect(),
        cohort.records.iter().map(|r| r.static_features.clone()).collect(),
    )?;
    let (imputed, n_imputed) = knn_impute(&table, knn_k)?;

    let mut processed = Vec::with_capacity(cohort.records.len());
    let mut per_patient = Vec::with_capacity(cohort.records.len());
    for (record, static_row) in cohort.records.iter().zip(&imputed.rows) {
        let (vitals, stats) = preprocess_vitals(&record.vitals)?;
        let medication = encode_medication(record.medication.as_deref())?;
        per_patient.push(PatientPreprocessStats {
            id: record.id.clone(),
            vitals: stats,
        });
        processed.push(ProcessedRecord {
            id: record.id.clone(),
            static_features: static_row.iter().map(|c| c.unwrap()).collect(),
            hip_embedding: record.hip_embedding.clone(),
            chest_embedding: record.chest_embedding.clone(),
            vitals,
            medication,
            label: record.label,
        });
    }
    let mean_dropped = per_patient
        .iter()
        .map(|p| p.vitals.dropped_step_fraction)
        .sum::<f64>()
        / per_patient.len() as f64;
    Ok((
        processed,
        PreprocessManifest {
            n_records: cohort.records.len(),
            knn_k,
            imputed_static_cells: n_imputed,
            mean_dropped_step_fraction: mean_dropped,
            per_patient,
        },
    ))
}
