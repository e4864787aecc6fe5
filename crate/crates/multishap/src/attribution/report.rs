use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{concat_features, Modality, ModalityInputs, ModalityPartition, MultimodalModel};
use crate::util::{kahan_sum, mean, sample_std};

use super::propagate::{propagate, PropagationMode};
use super::shapley::{
    encoder_attribution_matrix, shapley_exact, shapley_sampled, AttributionMatrix,
    AttributionVector, BackgroundSet, ShapleyConfig,
};

const RC_GUARD: f64 = 1e-12;

/// Local (single-case) modality contributions: signed AC per modality, RC
/// normalized by the total attribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModalityStat {
    pub modality: Modality,
    pub ac: f64,
    /// None when the total attribution is too close to zero for RC to be
    /// meaningful.
    pub rc: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModalityContribution {
    pub stats: Vec<ModalityStat>,
    pub total_attribution: f64,
}

/// Sums the Shapley values in each modality slice (AC) and normalizes by the
/// total (RC). When |total| is below the guard, RCs are flagged undefined but
/// ACs are still returned.
pub fn modality_contribution(attr: &AttributionVector, partition: &ModalityPartition) -> Result<ModalityContribution> {
    if attr.values.len() != partition.total_len() {
        return Err(Error::dim("attribution length", partition.total_len(), attr.values.len()));
    }
    let total = kahan_sum(attr.values.iter().copied());
    let rc_defined = total.abs() >= RC_GUARD;
    let stats = partition
        .slices
        .iter()
        .map(|slice| {
            let ac = kahan_sum(attr.values[slice.offset..slice.offset + slice.len].iter().copied());
            ModalityStat {
                modality: slice.modality,
                ac,
                rc: rc_defined.then(|| ac / total),
            }
        })
        .collect();
    Ok(ModalityContribution {
        stats,
        total_attribution: total,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalModalityStat {
    pub modality: Modality,
    /// mean over cases of |AC_m|
    pub mean_abs_ac: f64,
    pub sd_abs_ac: f64,
    /// mean_abs_ac normalized across modalities; sums to 1
    pub rc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalContribution {
    pub n_cases: usize,
    pub stats: Vec<GlobalModalityStat>,
}

/// Global explanation: average absolute contribution per modality across
/// cases, renormalized so the global RCs sum to 1.
pub fn global_aggregate(per_case: &[ModalityContribution]) -> Result<GlobalContribution> {
    let first = per_case.first().ok_or_else(|| Error::EmptyInput("per-case contributions".into()))?;
    let modalities: Vec<Modality> = first.stats.iter().map(|s| s.modality).collect();
    let mut means = Vec::with_capacity(modalities.len());
    let mut sds = Vec::with_capacity(modalities.len());
    for (k, _) in modalities.iter().enumerate() {
        let abs_acs: Vec<f64> = per_case.iter().map(|c| c.stats[k].ac.abs()).collect();
        means.push(mean(&abs_acs));
        sds.push(sample_std(&abs_acs));
    }
    let total: f64 = kahan_sum(means.iter().copied());
    let stats = modalities
        .into_iter()
        .zip(means.iter().zip(&sds))
        .map(|(modality, (&mean_abs_ac, &sd_abs_ac))| GlobalModalityStat {
            modality,
            mean_abs_ac,
            sd_abs_ac,
            rc: if total.abs() < RC_GUARD { 0.0 } else { mean_abs_ac / total },
        })
        .collect();
    Ok(GlobalContribution {
        n_cases: per_case.len(),
        stats,
    })
}

/// CSV layout for global explanations: one row per modality with the mean
/// and standard deviation of |AC| and the mean RC.
pub fn global_csv(global: &GlobalContribution) -> String {
    let mut out = String::from("modality,mean_ac,sd_ac,mean_rc\n");
    for s in &global.stats {
        out.push_str(&format!("{},{},{},{}\n", s.modality.name(), s.mean_abs_ac, s.sd_abs_ac, s.rc));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub mode: PropagationMode,
    pub shapley: ShapleyConfig,
    /// Which modality's attribution to propagate to raw inputs in step 2.
    pub propagate_modality: Modality,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            mode: PropagationMode::Conserving,
            shapley: ShapleyConfig::default(),
            propagate_modality: Modality::Static,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportModality {
    pub name: String,
    pub ac: f64,
    pub rc: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StaticFeatureAttribution {
    pub name: String,
    pub phi: f64,
}

/// A local two-step explanation: modality AC/RC from the concatenated-feature
/// Shapley values, plus the propagated per-raw-input attributions for one
/// modality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionReport {
    pub base_value: f64,
    pub prediction: f64,
    pub modalities: Vec<ReportModality>,
    pub static_features: Vec<StaticFeatureAttribution>,
    pub mode: String,
    pub seed: u64,
    pub n_samples: usize,
}

/// Step-1 Shapley values of the 81 concatenated features w.r.t. the head.
pub fn step1_attribution(
    model: &MultimodalModel,
    inputs: &ModalityInputs,
    bg: &[ModalityInputs],
    config: &ShapleyConfig,
) -> Result<AttributionVector> {
    let x = concat_features(&model.encode(inputs)?, &model.partition)?;
    let bg_rows: Vec<Vec<f64>> = bg
        .iter()
        .map(|b| concat_features(&model.encode(b)?, &model.partition))
        .collect::<Result<_>>()?;
    let bg_set = BackgroundSet::new(bg_rows, "training set")?.subsample(config.background_cap, config.seed);
    let head = &model.head;
    let f = move |v: &[f64]| head.forward(v).expect("head dims fixed")[0];
    if x.len() <= config.exact_cap {
        shapley_exact(&f, &x, &bg_set, config.exact_cap)
    } else {
        shapley_sampled(&f, &x, &bg_set, config.n_samples, config.seed)
    }
}

/// Step-2 encoder attribution matrix for one modality.
pub fn step2_matrix(
    model: &MultimodalModel,
    inputs: &ModalityInputs,
    bg: &[ModalityInputs],
    modality: Modality,
    config: &ShapleyConfig,
) -> Result<AttributionMatrix> {
    let raw = inputs.raw(modality);
    let bg_rows: Vec<Vec<f64>> = bg.iter().map(|b| b.raw(modality).to_vec()).collect();
    let bg_set = BackgroundSet::new(bg_rows, "training set")?;
    match model.encoder(modality) {
        Some(encoder) => encoder_attribution_matrix(encoder, raw, &bg_set, config),
        None => {
            // medication passthrough: explain the identity map
            let f = |v: &[f64]| v.to_vec();
            let bg_set = bg_set.subsample(config.background_cap, config.seed);
            super::shapley::shapley_exact_vec(&f, raw, &bg_set, raw.len().max(config.exact_cap))
        }
    }
}

/// The full two-step explanation of one case.
pub fn explain_case(
    model: &MultimodalModel,
    inputs: &ModalityInputs,
    bg: &[ModalityInputs],
    static_names: &[String],
    config: &ExplainConfig,
) -> Result<AttributionReport> {
    let attr = step1_attribution(model, inputs, bg, &config.shapley)?;
    let contributions = modality_contribution(&attr, &model.partition)?;

    let slice = model.partition.slice(config.propagate_modality);
    let psi = &attr.values[slice.offset..slice.offset + slice.len];
    let matrix = step2_matrix(model, inputs, bg, config.propagate_modality, &config.shapley)?;
    let raw_phis = propagate(&matrix, psi, config.mode).map_err(|e| match e {
        Error::VanishingContribution => Error::VanishingContribution,
        other => other,
    })?;

    let raw_dim = inputs.raw(config.propagate_modality).len();
    if static_names.len() != raw_dim {
        return Err(Error::dim("raw feature names", raw_dim, static_names.len()));
    }
    Ok(AttributionReport {
        base_value: attr.base_value,
        prediction: attr.prediction,
        modalities: contributions
            .stats
            .iter()
            .map(|s| ReportModality {
                name: s.modality.name().to_string(),
                ac: s.ac,
                rc: s.rc,
            })
            .collect(),
        static_features: static_names
            .iter()
            .zip(&raw_phis)
            .map(|(name, &phi)| StaticFeatureAttribution {
                name: name.clone(),
                phi,
            })
            .collect(),
        mode: config.mode.name().to_string(),
        seed: config.shapley.seed,
        n_samples: config.shapley.n_samples,
    })
}
