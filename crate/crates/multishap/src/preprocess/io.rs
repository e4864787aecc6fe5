//! File formats for cohort hand-off between pipeline stages: CSV for static
//! features, embeddings, medications, and labels; NDJSON for vitals.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, PatientRecord, ProcessedRecord, N_EMBEDDING, N_STATIC_FEATURES};
use crate::error::{Error, Result};

use super::medication::{MEDICATION_GROUPS, N_MEDICATION_GROUPS};
use super::pipeline::PreprocessManifest;
use super::vitals::{RawVitals, RawVitalsSample, VitalsSeries, N_VITALS_CHANNELS};

pub const STATIC_FILE: &str = "static.csv";
pub const HIP_FILE: &str = "hip.csv";
pub const CHEST_FILE: &str = "chest.csv";
pub const VITALS_FILE: &str = "vitals.ndjson";
pub const MEDICATIONS_FILE: &str = "medications.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const PREPROCESS_MANIFEST_FILE: &str = "preprocess_manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct VitalsLine {
    patient_id: String,
    timestamp: DateTime<Utc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    heart_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pulse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spo2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bp_dia: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bp_sys: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bp_mean: Option<f64>,
}

impl VitalsLine {
    fn values(&self) -> [Option<f64>; N_VITALS_CHANNELS] {
        [
            self.heart_rate,
            self.pulse,
            self.spo2,
            self.bp_dia,
            self.bp_sys,
            self.bp_mean,
        ]
    }

    fn from_values(patient_id: &str, timestamp: DateTime<Utc>, v: &[Option<f64>; N_VITALS_CHANNELS]) -> Self {
        Self {
            patient_id: patient_id.to_string(),
            timestamp,
            heart_rate: v[0],
            pulse: v[1],
            spo2: v[2],
            bp_dia: v[3],
            bp_sys: v[4],
            bp_mean: v[5],
        }
    }
}

fn write_feature_csv(path: &Path, prefix: &str, n: usize, rows: impl Iterator<Item = (String, Vec<Option<f64>>)>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["patient_id".to_string()];
    header.extend((0..n).map(|i| format!("{prefix}{i}")));
    w.write_record(&header)?;
    for (id, values) in rows {
        let mut rec = vec![id];
        rec.extend(values.iter().map(|v| match v {
            Some(x) => format!("{x}"),
            None => "NA".to_string(),
        }));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn read_feature_csv(path: &Path, expected_cols: usize) -> Result<Vec<(String, Vec<Option<f64>>)>> {
    let mut r = csv::Reader::from_path(path)?;
    let header_len = r.headers()?.len();
    if header_len != expected_cols + 1 {
        return Err(Error::dim(
            format!("columns in {}", path.display()),
            expected_cols + 1,
            header_len,
        ));
    }
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        let id = record
            .get(0)
            .ok_or_else(|| Error::Format("missing patient_id".into()))?
            .to_string();
        let values = record
            .iter()
            .skip(1)
            .map(|cell| {
                if cell == "NA" || cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>()
                        .map(Some)
                        .map_err(|_| Error::Format(format!("bad number {cell:?} in {}", path.display())))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((id, values));
    }
    Ok(out)
}

/// Writes a raw (pre-preprocessing) cohort as a directory of CSV/NDJSON files.
pub fn write_cohort(dir: &Path, cohort: &Cohort) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_feature_csv(
        &dir.join(STATIC_FILE),
        "f",
        N_STATIC_FEATURES,
        cohort.records.iter().map(|r| (r.id.clone(), r.static_features.clone())),
    )?;
    write_feature_csv(
        &dir.join(HIP_FILE),
        "e",
        N_EMBEDDING,
        cohort
            .records
            .iter()
            .map(|r| (r.id.clone(), r.hip_embedding.iter().map(|&v| Some(v)).collect())),
    )?;
    write_feature_csv(
        &dir.join(CHEST_FILE),
        "e",
        N_EMBEDDING,
        cohort
            .records
            .iter()
            .map(|r| (r.id.clone(), r.chest_embedding.iter().map(|&v| Some(v)).collect())),
    )?;

    let mut vitals = BufWriter::new(File::create(dir.join(VITALS_FILE))?);
    for r in &cohort.records {
        for s in &r.vitals.samples {
            let line = VitalsLine::from_values(&r.id, s.time, &s.values);
            serde_json::to_writer(&mut vitals, &line)?;
            vitals.write_all(b"\n")?;
        }
    }
    vitals.flush()?;

    let mut meds = csv::Writer::from_path(dir.join(MEDICATIONS_FILE))?;
    meds.write_record(["patient_id", "groups"])?;
    for r in &cohort.records {
        if let Some(groups) = &r.medication {
            meds.write_record([r.id.as_str(), groups.join(";").as_str()])?;
        }
    }
    meds.flush()?;

    let mut labels = csv::Writer::from_path(dir.join(LABELS_FILE))?;
    labels.write_record(["patient_id", "label"])?;
    for r in &cohort.records {
        labels.write_record([r.id.as_str(), &r.label.to_string()])?;
    }
    labels.flush()?;
    Ok(())
}

fn read_vitals_lines(path: &Path) -> Result<HashMap<String, Vec<VitalsLine>>> {
    let mut out: HashMap<String, Vec<VitalsLine>> = HashMap::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: VitalsLine = serde_json::from_str(&line)?;
        out.entry(parsed.patient_id.clone()).or_default().push(parsed);
    }
    Ok(out)
}

/// Reads a raw cohort directory. Record order follows `static.csv`.
pub fn read_cohort(dir: &Path) -> Result<Cohort> {
    let static_rows = read_feature_csv(&dir.join(STATIC_FILE), N_STATIC_FEATURES)?;
    let unwrap_dense = |rows: Vec<(String, Vec<Option<f64>>)>, what: &str| -> Result<HashMap<String, Vec<f64>>> {
        rows.into_iter()
            .map(|(id, vals)| {
                let dense = vals
                    .into_iter()
                    .collect::<Option<Vec<f64>>>()
                    .ok_or_else(|| Error::Format(format!("{what} must not contain NA")))?;
                Ok((id, dense))
            })
            .collect()
    };
    let hip = unwrap_dense(read_feature_csv(&dir.join(HIP_FILE), N_EMBEDDING)?, "hip embeddings")?;
    let chest = unwrap_dense(read_feature_csv(&dir.join(CHEST_FILE), N_EMBEDDING)?, "chest embeddings")?;
    let mut vitals = read_vitals_lines(&dir.join(VITALS_FILE))?;

    let mut medication: HashMap<String, Vec<String>> = HashMap::new();
    let mut meds = csv::Reader::from_path(dir.join(MEDICATIONS_FILE))?;
    for record in meds.records() {
        let record = record?;
        let id = record.get(0).unwrap_or_default().to_string();
        let groups: Vec<String> = record
            .get(1)
            .unwrap_or_default()
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| s.to_string())
            .collect();
        medication.insert(id, groups);
    }

    let mut labels: HashMap<String, u8> = HashMap::new();
    let mut lab = csv::Reader::from_path(dir.join(LABELS_FILE))?;
    for record in lab.records() {
        let record = record?;
        let id = record.get(0).unwrap_or_default().to_string();
        let label: u8 = record
            .get(1)
            .unwrap_or_default()
            .parse()
            .map_err(|_| Error::Format("label must be 0 or 1".into()))?;
        labels.insert(id, label);
    }

    let mut records = Vec::with_capacity(static_rows.len());
    for (id, static_features) in static_rows {
        let lines = vitals.remove(&id).unwrap_or_default();
        let raw = RawVitals {
            samples: lines
                .iter()
                .map(|l| RawVitalsSample {
                    time: l.timestamp,
                    values: l.values(),
                })
                .collect(),
        };
        records.push(PatientRecord {
            hip_embedding: hip
                .get(&id)
                .ok_or_else(|| Error::Format(format!("no hip embedding for {id}")))?
                .clone(),
            chest_embedding: chest
                .get(&id)
                .ok_or_else(|| Error::Format(format!("no chest embedding for {id}")))?
                .clone(),
            vitals: raw,
            medication: medication.get(&id).cloned(),
            label: *labels
                .get(&id)
                .ok_or_else(|| Error::Format(format!("no label for {id}")))?,
            static_features,
            id,
        });
    }
    Ok(Cohort { records })
}

/// Writes a processed cohort in the same formats (static table has no NA
/// cells, vitals lines carry all six channels) plus the preprocessing
/// manifest.
pub fn write_processed(dir: &Path, records: &[ProcessedRecord], manifest: &PreprocessManifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_feature_csv(
        &dir.join(STATIC_FILE),
        "f",
        N_STATIC_FEATURES,
        records
            .iter()
            .map(|r| (r.id.clone(), r.static_features.iter().map(|&v| Some(v)).collect())),
    )?;
    write_feature_csv(
        &dir.join(HIP_FILE),
        "e",
        N_EMBEDDING,
        records
            .iter()
            .map(|r| (r.id.clone(), r.hip_embedding.iter().map(|&v| Some(v)).collect())),
    )?;
    write_feature_csv(
        &dir.join(CHEST_FILE),
        "e",
        N_EMBEDDING,
        records
            .iter()
            .map(|r| (r.id.clone(), r.chest_embedding.iter().map(|&v| Some(v)).collect())),
    )?;

    let mut vitals = BufWriter::new(File::create(dir.join(VITALS_FILE))?);
    for r in records {
        for k in 0..r.vitals.len() {
            let values: [Option<f64>; N_VITALS_CHANNELS] =
                std::array::from_fn(|ch| r.vitals.channels[ch][k]);
            let ts = r.vitals.start_time
                + Duration::milliseconds((k as f64 * r.vitals.step_seconds * 1000.0) as i64);
            let line = VitalsLine::from_values(&r.id, ts, &values);
            serde_json::to_writer(&mut vitals, &line)?;
            vitals.write_all(b"\n")?;
        }
    }
    vitals.flush()?;

    let mut meds = csv::Writer::from_path(dir.join(MEDICATIONS_FILE))?;
    meds.write_record(["patient_id", "groups"])?;
    for r in records {
        let groups: Vec<&str> = (0..N_MEDICATION_GROUPS)
            .filter(|&i| r.medication[i] == 1)
            .map(|i| MEDICATION_GROUPS[i])
            .collect();
        meds.write_record([r.id.as_str(), groups.join(";").as_str()])?;
    }
    meds.flush()?;

    let mut labels = csv::Writer::from_path(dir.join(LABELS_FILE))?;
    labels.write_record(["patient_id", "label"])?;
    for r in records {
        labels.write_record([r.id.as_str(), &r.label.to_string()])?;
    }
    labels.flush()?;

    let manifest_json = serde_json::to_string_pretty(manifest)?;
    std::fs::write(dir.join(PREPROCESS_MANIFEST_FILE), manifest_json)?;
    Ok(())
}

/// Reads a processed cohort directory back into memory.
pub fn read_processed(dir: &Path) -> Result<Vec<ProcessedRecord>> {
    let static_rows = read_feature_csv(&dir.join(STATIC_FILE), N_STATIC_FEATURES)?;
    let cohort = read_cohort(dir)?;
    if static_rows.iter().any(|(_, row)| row.iter().any(|c| c.is_none())) {
        return Err(Error::Format("processed static table must not contain NA".into()));
    }
    cohort
        .records
        .into_iter()
        .map(|r| {
            let step = if r.vitals.samples.len() >= 2 {
                (r.vitals.samples[1].time - r.vitals.samples[0].time).num_milliseconds() as f64 / 1000.0
            } else {
                super::vitals::DEFAULT_STEP_SECONDS
            };
            let channels: [Vec<Option<f64>>; N_VITALS_CHANNELS] = std::array::from_fn(|ch| {
                r.vitals.samples.iter().map(|s| s.values[ch]).collect()
            });
            if channels.iter().any(|c| c.iter().any(|v| v.is_none())) {
                return Err(Error::Format(format!("processed vitals for {} contain missing cells", r.id)));
            }
            let start_time = r
                .vitals
                .samples
                .first()
                .map(|s| s.time)
                .ok_or(Error::NoUsableVitals)?;
            Ok(ProcessedRecord {
                id: r.id,
                static_features: r.static_features.into_iter().map(|c| c.unwrap()).collect(),
                hip_embedding: r.hip_embedding,
                chest_embedding: r.chest_embedding,
                vitals: VitalsSeries {
                    start_time,
                    step_seconds: step,
                    channels,
                },
                medication: super::medication::encode_medication(r.medication.as_deref())?,
                label: r.label,
            })
        })
        .collect()
}
