//! Core record types shared by the generator, preprocessing, training, and
//! explanation stages.

use serde::{Deserialize, Serialize};

use crate::preprocess::{MedicationVector, RawVitals, VitalsSeries};

pub const N_STATIC_FEATURES: usize = 76;
pub const N_EMBEDDING: usize = 32;

/// One case before preprocessing. `None` cells mark missing values; a `None`
/// medication record means no record exists for the patient at all.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub static_features: Vec<Option<f64>>,
    pub hip_embedding: Vec<f64>,
    pub chest_embedding: Vec<f64>,
    pub vitals: RawVitals,
    pub medication: Option<Vec<String>>,
    pub label: u8,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Cohort {
    pub records: Vec<PatientRecord>,
}

impl Cohort {
    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.records.iter().filter(|r| r.label == 1).count();
        (self.records.len() - pos, pos)
    }
}

/// One case after the full preprocessing pipeline: no missing values remain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcessedRecord {
    pub id: String,
    pub static_features: Vec<f64>,
    pub hip_embedding: Vec<f64>,
    pub chest_embedding: Vec<f64>,
    pub vitals: VitalsSeries,
    pub medication: MedicationVector,
    pub label: u8,
}
