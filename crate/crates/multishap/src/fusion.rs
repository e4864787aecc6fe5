//! Early-fusion model: per-modality MLP encoders producing 16-dim features
//! (17-dim medication passthrough), concatenated to 81 dims and fed to a
//! 64-neuron sigmoid head, with staged freeze/finetune training.

use std::collections::BTreeSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ProcessedRecord;
use crate::error::{Error, Result};
use crate::nn::{
    train, Activation, ClassWeights, DenseLayer, DifferentiableModel, LabeledSample, MlpModel,
    TrainConfig, TrainHistory,
};
use crate::preprocess::{VitalsSeries, N_MEDICATION_GROUPS, N_VITALS_CHANNELS};
use crate::util::{derive_seed, mean, pop_std};

pub const N_ENCODED: usize = 16;
pub const N_VITALS_SUMMARY: usize = 6 * N_VITALS_CHANNELS;
pub const N_CONCAT: usize = 4 * N_ENCODED + N_MEDICATION_GROUPS;

pub const STAGE1_LR: f64 = 5e-2;
pub const STAGE2_LR: f64 = 5e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Static,
    Hip,
    Chest,
    Vitals,
    Med,
}

impl Modality {
    pub const ALL: [Modality; 5] = [
        Modality::Static,
        Modality::Hip,
        Modality::Chest,
        Modality::Vitals,
        Modality::Med,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Static => "static",
            Modality::Hip => "hip",
            Modality::Chest => "chest",
            Modality::Vitals => "vitals",
            Modality::Med => "med",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalitySlice {
    pub modality: Modality,
    pub offset: usize,
    pub len: usize,
}

/// Slice layout of the concatenated feature vector:
/// static | hip | chest | vitals | med.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityPartition {
    pub slices: Vec<ModalitySlice>,
}

impl Default for ModalityPartition {
    fn default() -> Self {
        let lens = [N_ENCODED, N_ENCODED, N_ENCODED, N_ENCODED, N_MEDICATION_GROUPS];
        let mut offset = 0;
        let slices = Modality::ALL
            .iter()
            .zip(lens)
            .map(|(&modality, len)| {
                let s = ModalitySlice {
                    modality,
                    offset,
                    len,
                };
                offset += len;
                s
            })
            .collect();
        Self { slices }
    }
}

impl ModalityPartition {
    pub fn total_len(&self) -> usize {
        self.slices.iter().map(|s| s.len).sum()
    }

    pub fn slice(&self, modality: Modality) -> &ModalitySlice {
        self.slices
            .iter()
            .find(|s| s.modality == modality)
            .expect("partition covers every modality")
    }

    pub fn validate(&self) -> Result<()> {
        let mut offset = 0;
        for s in &self.slices {
            if s.offset != offset {
                return Err(Error::InvalidConfig(format!(
                    "partition slice {} not contiguous",
                    s.modality.name()
                )));
            }
            offset += s.len;
        }
        if offset != N_CONCAT {
            return Err(Error::dim("partition total", N_CONCAT, offset));
        }
        Ok(())
    }
}

/// Raw per-modality inputs to the fused model, before encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityInputs {
    pub static_features: Vec<f64>,
    pub hip_embedding: Vec<f64>,
    pub chest_embedding: Vec<f64>,
    pub vitals_summary: Vec<f64>,
    pub medication: Vec<f64>,
}

impl ModalityInputs {
    pub fn from_record(record: &ProcessedRecord) -> Self {
        Self {
            static_features: record.static_features.clone(),
            hip_embedding: record.hip_embedding.clone(),
            chest_embedding: record.chest_embedding.clone(),
            vitals_summary: vitals_summary(&record.vitals),
            medication: record.medication.iter().map(|&b| b as f64).collect(),
        }
    }

    pub fn raw(&self, modality: Modality) -> &[f64] {
        match modality {
            Modality::Static => &self.static_features,
            Modality::Hip => &self.hip_embedding,
            Modality::Chest => &self.chest_embedding,
            Modality::Vitals => &self.vitals_summary,
            Modality::Med => &self.medication,
        }
    }
}

/// Fixed per-channel summary statistics standing in for a recurrent vitals
/// encoder: mean, sd, min, max, last value, and least-squares slope.
pub fn vitals_summary(series: &VitalsSeries) -> Vec<f64> {
    let mut out = Vec::with_capacity(N_VITALS_SUMMARY);
    for channel in &series.channels {
        let values: Vec<f64> = channel.iter().filter_map(|v| *v).collect();
        if values.is_empty() {
            out.extend([0.0; 6]);
            continue;
        }
        let m = mean(&values);
        let sd = pop_std(&values);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let last = *values.last().unwrap();
        out.extend([m, sd, min, max, last, slope(&values)]);
    }
    out
}

fn slope(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let t_mean = (n - 1) as f64 / 2.0;
    let v_mean = mean(values);
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, v) in values.iter().enumerate() {
        let dt = t as f64 - t_mean;
        num += dt * (v - v_mean);
        den += dt * dt;
    }
    num / den
}

/// Parameter groups excluded from gradient updates during a training stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeSpec {
    pub frozen: BTreeSet<Modality>,
    pub head_frozen: bool,
}

impl FreezeSpec {
    /// Stage 1: all encoders frozen, head trains.
    pub fn encoders_frozen() -> Self {
        Self {
            frozen: [Modality::Static, Modality::Hip, Modality::Chest, Modality::Vitals]
                .into_iter()
                .collect(),
            head_frozen: false,
        }
    }

    /// Stage 2: image-analog encoders stay frozen, static and vitals unfreeze.
    pub fn images_frozen() -> Self {
        Self {
            frozen: [Modality::Hip, Modality::Chest].into_iter().collect(),
            head_frozen: false,
        }
    }
}

/// The fused model: four trainable encoders (medication passes through
/// unchanged), a shared head, and the slice layout of the concatenation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultimodalModel {
    pub static_encoder: MlpModel,
    pub hip_encoder: MlpModel,
    pub chest_encoder: MlpModel,
    pub vitals_encoder: MlpModel,
    pub head: MlpModel,
    pub partition: ModalityPartition,
    pub freeze: FreezeSpec,
}

impl MultimodalModel {
    pub fn new_seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let static_encoder =
            MlpModel::init_chain(&[crate::data::N_STATIC_FEATURES, N_ENCODED], Activation::LeakyRelu, &mut rng);
        let hip_encoder =
            MlpModel::init_chain(&[crate::data::N_EMBEDDING, N_ENCODED], Activation::LeakyRelu, &mut rng);
        let chest_encoder =
            MlpModel::init_chain(&[crate::data::N_EMBEDDING, N_ENCODED], Activation::LeakyRelu, &mut rng);
        let vitals_encoder =
            MlpModel::init_chain(&[N_VITALS_SUMMARY, N_ENCODED], Activation::LeakyRelu, &mut rng);
        let head = MlpModel::init_chain(&[N_CONCAT, 64, 1], Activation::Sigmoid, &mut rng);
        Self {
            static_encoder,
            hip_encoder,
            chest_encoder,
            vitals_encoder,
            head,
            partition: ModalityPartition::default(),
            freeze: FreezeSpec::default(),
        }
    }

    pub fn encoder(&self, modality: Modality) -> Option<&MlpModel> {
        match modality {
            Modality::Static => Some(&self.static_encoder),
            Modality::Hip => Some(&self.hip_encoder),
            Modality::Chest => Some(&self.chest_encoder),
            Modality::Vitals => Some(&self.vitals_encoder),
            Modality::Med => None, // identity passthrough
        }
    }

    fn trainable_parts(&self) -> [&MlpModel; 5] {
        [
            &self.static_encoder,
            &self.hip_encoder,
            &self.chest_encoder,
            &self.vitals_encoder,
            &self.head,
        ]
    }

    fn trainable_parts_mut(&mut self) -> [&mut MlpModel; 5] {
        [
            &mut self.static_encoder,
            &mut self.hip_encoder,
            &mut self.chest_encoder,
            &mut self.vitals_encoder,
            &mut self.head,
        ]
    }

    fn part_frozen(&self, idx: usize) -> bool {
        match idx {
            0 => self.freeze.frozen.contains(&Modality::Static),
            1 => self.freeze.frozen.contains(&Modality::Hip),
            2 => self.freeze.frozen.contains(&Modality::Chest),
            3 => self.freeze.frozen.contains(&Modality::Vitals),
            _ => self.freeze.head_frozen,
        }
    }

    /// Encodes each modality to its hidden feature vector.
    pub fn encode(&self, inputs: &ModalityInputs) -> Result<Vec<(Modality, Vec<f64>)>> {
        let mut out = Vec::with_capacity(5);
        for &modality in &Modality::ALL {
            let raw = inputs.raw(modality);
            let encoded = match self.encoder(modality) {
                Some(encoder) => encoder.forward(raw)?,
                None => raw.to_vec(),
            };
            out.push((modality, encoded));
        }
        Ok(out)
    }

    pub fn predict(&self, inputs: &ModalityInputs) -> Result<f64> {
        let encoded = self.encode(inputs)?;
        let concat = concat_features(&encoded, &self.partition)?;
        let out = self.head.forward(&concat)?;
        Ok(out[0])
    }

    /// Scalar head output for an already-concatenated 81-dim feature vector.
    pub fn head_output(&self, concat: &[f64]) -> Result<f64> {
        Ok(self.head.forward(concat)?[0])
    }

    pub fn save_bundle(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.static_encoder.save(&dir.join("static_encoder.json"))?;
        self.hip_encoder.save(&dir.join("hip_encoder.json"))?;
        self.chest_encoder.save(&dir.join("chest_encoder.json"))?;
        self.vitals_encoder.save(&dir.join("vitals_encoder.json"))?;
        self.head.save(&dir.join("head.json"))?;
        std::fs::write(
            dir.join("partition.json"),
            serde_json::to_string_pretty(&self.partition)?,
        )?;
        Ok(())
    }

    pub fn load_bundle(dir: &Path) -> Result<Self> {
        let partition: ModalityPartition =
            serde_json::from_str(&std::fs::read_to_string(dir.join("partition.json"))?)?;
        partition.validate()?;
        Ok(Self {
            static_encoder: MlpModel::load(&dir.join("static_encoder.json"))?,
            hip_encoder: MlpModel::load(&dir.join("hip_encoder.json"))?,
            chest_encoder: MlpModel::load(&dir.join("chest_encoder.json"))?,
            vitals_encoder: MlpModel::load(&dir.join("vitals_encoder.json"))?,
            head: MlpModel::load(&dir.join("head.json"))?,
            partition,
            freeze: FreezeSpec::default(),
        })
    }
}

/// Deterministic concatenation static | hip | chest | vitals | med.
pub fn concat_features(per_modality: &[(Modality, Vec<f64>)], partition: &ModalityPartition) -> Result<Vec<f64>> {
    let mut out = vec![0.0; partition.total_len()];
    for slice in &partition.slices {
        let (_, values) = per_modality
            .iter()
            .find(|(m, _)| *m == slice.modality)
            .ok_or_else(|| Error::MissingModality(slice.modality.name().into()))?;
        if values.len() != slice.len {
            return Err(Error::dim(
                format!("{} features", slice.modality.name()),
                slice.len,
                values.len(),
            ));
        }
        out[slice.offset..slice.offset + slice.len].copy_from_slice(values);
    }
    Ok(out)
}

impl DifferentiableModel for MultimodalModel {
    type Input = ModalityInputs;

    fn predict_prob(&self, x: &Self::Input) -> Result<f64> {
        self.predict(x)
    }

    fn param_count(&self) -> usize {
        self.trainable_parts().iter().map(|p| p.param_count()).sum()
    }

    fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for part in self.trainable_parts() {
            out.extend(part.params_flat());
        }
        out
    }

    fn set_params_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for part in self.trainable_parts_mut() {
            let n = part.param_count();
            part.set_params_flat(&flat[offset..offset + n]);
            offset += n;
        }
    }

    fn frozen_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.param_count());
        for (idx, part) in self.trainable_parts().iter().enumerate() {
            let frozen = self.part_frozen(idx);
            out.extend(std::iter::repeat(frozen).take(part.param_count()));
        }
        out
    }

    fn l2_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.param_count());
        for part in self.trainable_parts() {
            out.extend(part.weight_mask());
        }
        out
    }

    fn loss_and_grad(
        &self,
        batch: &[&LabeledSample<Self::Input>],
        weights: &ClassWeights,
        l2: f64,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("gradient batch".into()));
        }
        let n = batch.len() as f64;
        let mut grads = vec![0.0; self.param_count()];
        let parts = self.trainable_parts();
        let offsets: Vec<usize> = parts
            .iter()
            .scan(0usize, |acc, p| {
                let o = *acc;
                *acc += p.param_count();
                Some(o)
            })
            .collect();
        let mut losses = Vec::with_capacity(batch.len());
        for (inputs, label) in batch.iter().map(|s| (&s.0, s.1)) {
            // dropout only in unfrozen parts; frozen encoders run in eval mode
            let encoder_modalities = [Modality::Static, Modality::Hip, Modality::Chest, Modality::Vitals];
            let mut caches = Vec::with_capacity(4);
            for (idx, &modality) in encoder_modalities.iter().enumerate() {
                let encoder = parts[idx];
                let masks = if self.part_frozen(idx) {
                    vec![None; encoder.layers.len()]
                } else {
                    crate::nn::sample_dropout_masks(encoder, dropout, rng)
                };
                caches.push(encoder.forward_cached(inputs.raw(modality), &masks)?);
            }
            let encoded: Vec<(Modality, Vec<f64>)> = encoder_modalities
                .iter()
                .zip(&caches)
                .map(|(&m, c)| (m, c.activations.last().unwrap().clone()))
                .chain(std::iter::once((Modality::Med, inputs.medication.clone())))
                .collect();
            let concat = concat_features(&encoded, &self.partition)?;
            let head_masks = if self.freeze.head_frozen {
                vec![None; self.head.layers.len()]
            } else {
                crate::nn::sample_dropout_masks(&self.head, dropout, rng)
            };
            let head_cache = self.head.forward_cached(&concat, &head_masks)?;
            let pred = head_cache.activations.last().unwrap()[0];
            losses.push(crate::nn::weighted_bce(pred, label, weights)?);
            let dpred = crate::nn::weighted_bce_grad(pred, label, weights) / n;
            let grad_concat =
                self.head
                    .backward(&head_cache, &[dpred], &mut grads[offsets[4]..offsets[4] + parts[4].param_count()]);
            for (idx, &modality) in encoder_modalities.iter().enumerate() {
                let slice = self.partition.slice(modality);
                let grad_out = &grad_concat[slice.offset..slice.offset + slice.len];
                parts[idx].backward(
                    &caches[idx],
                    grad_out,
                    &mut grads[offsets[idx]..offsets[idx] + parts[idx].param_count()],
                );
            }
        }
        let mut loss = crate::util::kahan_sum(losses) / n;
        loss += crate::nn::apply_l2(&mut grads, &self.params_flat(), &self.l2_mask(), l2);
        Ok((loss, grads))
    }
}

/// Appends a single sigmoid neuron for unimodal pre-training; the transfer
/// step strips it again.
pub fn unimodal_wrap(encoder: &MlpModel, seed: u64) -> MlpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = encoder.layers.clone();
    layers.push(DenseLayer::init(
        encoder.output_dim(),
        1,
        Activation::Sigmoid,
        &mut rng,
    ));
    MlpModel {
        layers,
        leaky_slope: encoder.leaky_slope,
    }
}

/// Recovers the encoder from a wrapped unimodal model, discarding the
/// classification layer.
pub fn unimodal_strip(wrapped: &MlpModel) -> MlpModel {
    let mut layers = wrapped.layers.clone();
    layers.pop();
    MlpModel {
        layers,
        leaky_slope: wrapped.leaky_slope,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StagedTrainReport {
    pub unimodal: Vec<(String, TrainHistory)>,
    pub stage1: TrainHistory,
    pub stage2: TrainHistory,
}

/// Pre-trains each trainable encoder on its own modality, transfers the
/// weights into the fused model, then trains in two stages: head only with
/// encoders frozen at `STAGE1_LR`, then finetune with only the image-analog
/// encoders frozen at `STAGE2_LR`.
pub fn staged_train(
    model: &MultimodalModel,
    train_set: &[LabeledSample<ModalityInputs>],
    val_set: &[LabeledSample<ModalityInputs>],
    config: &TrainConfig,
    weights: &ClassWeights,
) -> Result<(MultimodalModel, StagedTrainReport)> {
    let mut model = model.clone();
    let mut unimodal_reports = Vec::new();
    for (i, modality) in [Modality::Static, Modality::Hip, Modality::Chest, Modality::Vitals]
        .into_iter()
        .enumerate()
    {
        let encoder = model.encoder(modality).unwrap();
        let wrapped = unimodal_wrap(encoder, derive_seed(config.seed, 1000 + i as u64));
        let uni_train: Vec<LabeledSample<Vec<f64>>> = train_set
            .iter()
            .map(|(x, y)| (x.raw(modality).to_vec(), *y))
            .collect();
        let uni_val: Vec<LabeledSample<Vec<f64>>> = val_set
            .iter()
            .map(|(x, y)| (x.raw(modality).to_vec(), *y))
            .collect();
        let uni_config = TrainConfig {
            seed: derive_seed(config.seed, 2000 + i as u64),
            ..config.clone()
        };
        let (trained, history) = train(&wrapped, &uni_train, &uni_val, &uni_config, weights)?;
        let encoder = unimodal_strip(&trained);
        match modality {
            Modality::Static => model.static_encoder = encoder,
            Modality::Hip => model.hip_encoder = encoder,
            Modality::Chest => model.chest_encoder = encoder,
            Modality::Vitals => model.vitals_encoder = encoder,
            Modality::Med => unreachable!(),
        }
        unimodal_reports.push((modality.name().to_string(), history));
    }

    model.freeze = FreezeSpec::encoders_frozen();
    let stage1_config = TrainConfig {
        learning_rate: STAGE1_LR,
        seed: derive_seed(config.seed, 3000),
        ..config.clone()
    };
    let (mut model, stage1) = train(&model, train_set, val_set, &stage1_config, weights)?;

    model.freeze = FreezeSpec::images_frozen();
    let stage2_config = TrainConfig {
        learning_rate: STAGE2_LR,
        seed: derive_seed(config.seed, 4000),
        ..config.clone()
    };
    let (mut model, stage2) = train(&model, train_set, val_set, &stage2_config, weights)?;
    model.freeze = FreezeSpec::default();
    Ok((
        model,
        StagedTrainReport {
            unimodal: unimodal_reports,
            stage1,
            stage2,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{class_weights, DenseLayer};
    use chrono::{TimeZone, Utc};

    fn zero_inputs() -> ModalityInputs {
        ModalityInputs {
            static_features: vec![0.0; crate::data::N_STATIC_FEATURES],
            hip_embedding: vec![0.0; crate::data::N_EMBEDDING],
            chest_embedding: vec![0.0; crate::data::N_EMBEDDING],
            vitals_summary: vec![0.0; N_VITALS_SUMMARY],
            medication: vec![0.0; N_MEDICATION_GROUPS],
        }
    }

    fn encoded(inputs: &ModalityInputs) -> Vec<(Modality, Vec<f64>)> {
        Modality::ALL.iter().map(|&m| (m, inputs.raw(m).to_vec())).collect()
    }

    fn raw_partition() -> ModalityPartition {
        // identity layout over the raw slices used by `encoded`
        let lens = [
            crate::data::N_STATIC_FEATURES,
            crate::data::N_EMBEDDING,
            crate::data::N_EMBEDDING,
            N_VITALS_SUMMARY,
            N_MEDICATION_GROUPS,
        ];
        let mut offset = 0;
        ModalityPartition {
            slices: Modality::ALL
                .iter()
                .zip(lens)
                .map(|(&modality, len)| {
                    let s = ModalitySlice { modality, offset, len };
                    offset += len;
                    s
                })
                .collect(),
        }
    }

    #[test]
    fn default_partition_shape() {
        let p = ModalityPartition::default();
        assert_eq!(p.total_len(), N_CONCAT);
        assert_eq!(N_CONCAT, 81);
        p.validate().unwrap();
        assert_eq!(p.slice(Modality::Vitals).offset, 48);
        assert_eq!(p.slice(Modality::Med).offset, 64);
        assert_eq!(p.slice(Modality::Med).len, 17);
    }

    #[test]
    fn concat_zero_inputs_is_zero_vector() {
        let parts: Vec<(Modality, Vec<f64>)> = ModalityPartition::default()
            .slices
            .iter()
            .map(|s| (s.modality, vec![0.0; s.len]))
            .collect();
        let out = concat_features(&parts, &ModalityPartition::default()).unwrap();
        assert_eq!(out, vec![0.0; 81]);
    }

    #[test]
    fn concat_one_hot_vitals_lands_at_offset_48() {
        for i in 0..N_ENCODED {
            let parts: Vec<(Modality, Vec<f64>)> = ModalityPartition::default()
                .slices
                .iter()
                .map(|s| {
                    let mut v = vec![0.0; s.len];
                    if s.modality == Modality::Vitals {
                        v[i] = 1.0;
                    }
                    (s.modality, v)
                })
                .collect();
            let out = concat_features(&parts, &ModalityPartition::default()).unwrap();
            for (k, &x) in out.iter().enumerate() {
                assert_eq!(x, if k == 48 + i { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn concat_med_ones_fill_last_17() {
        let parts: Vec<(Modality, Vec<f64>)> = ModalityPartition::default()
            .slices
            .iter()
            .map(|s| {
                let v = if s.modality == Modality::Med {
                    vec![1.0; s.len]
                } else {
                    vec![0.0; s.len]
                };
                (s.modality, v)
            })
            .collect();
        let out = concat_features(&parts, &ModalityPartition::default()).unwrap();
        assert!(out[..64].iter().all(|&x| x == 0.0));
        assert!(out[64..].iter().all(|&x| x == 1.0));
    }

    #[test]
    fn concat_missing_modality_rejected() {
        let parts: Vec<(Modality, Vec<f64>)> = ModalityPartition::default()
            .slices
            .iter()
            .filter(|s| s.modality != Modality::Chest)
            .map(|s| (s.modality, vec![0.0; s.len]))
            .collect();
        assert!(matches!(
            concat_features(&parts, &ModalityPartition::default()),
            Err(Error::MissingModality(_))
        ));
    }

    #[test]
    fn partition_invariant_perturbation_stays_in_slice() {
        let partition = raw_partition();
        let base = zero_inputs();
        let mut perturbed = base.clone();
        perturbed.hip_embedding[3] = 7.5;
        let a = concat_features(&encoded(&base), &partition).unwrap();
        let b = concat_features(&encoded(&perturbed), &partition).unwrap();
        let slice = partition.slice(Modality::Hip);
        for k in 0..partition.total_len() {
            let inside = (slice.offset..slice.offset + slice.len).contains(&k);
            assert_eq!(a[k] != b[k], inside && k == slice.offset + 3);
        }
    }

    #[test]
    fn zero_weight_head_predicts_half() {
        let mut model = MultimodalModel::new_seeded(0);
        for layer in model.head.layers.iter_mut() {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
            layer.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let p = model.predict(&zero_inputs()).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn predict_equals_manual_two_step() {
        let model = MultimodalModel::new_seeded(3);
        let mut inputs = zero_inputs();
        for (i, v) in inputs.static_features.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        inputs.medication[4] = 1.0;
        let p = model.predict(&inputs).unwrap();
        let concat = concat_features(&model.encode(&inputs).unwrap(), &model.partition).unwrap();
        let manual = model.head_output(&concat).unwrap();
        assert_eq!(p, manual);
    }

    #[test]
    fn predict_in_open_unit_interval() {
        let model = MultimodalModel::new_seeded(11);
        let mut inputs = zero_inputs();
        inputs.vitals_summary.iter_mut().for_each(|v| *v = 5.0);
        let p = model.predict(&inputs).unwrap();
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn hand_toy_model_matches_arithmetic() {
        // one feature per modality, identity encoders, linear+sigmoid head
        let lens = [1usize, 1, 1, 1, 1];
        let mut offset = 0;
        let partition = ModalityPartition {
            slices: Modality::ALL
                .iter()
                .zip(lens)
                .map(|(&modality, len)| {
                    let s = ModalitySlice { modality, offset, len };
                    offset += len;
                    s
                })
                .collect(),
        };
        let identity = MlpModel::new(vec![DenseLayer {
            in_dim: 1,
            out_dim: 1,
            weights: vec![1.0],
            bias: vec![0.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        let head = MlpModel::new(vec![DenseLayer {
            in_dim: 5,
            out_dim: 1,
            weights: vec![1.0, -2.0, 0.5, 0.0, 3.0],
            bias: vec![0.1],
            activation: Activation::Sigmoid,
        }])
        .unwrap();
        let model = MultimodalModel {
            static_encoder: identity.clone(),
            hip_encoder: identity.clone(),
            chest_encoder: identity.clone(),
            vitals_encoder: identity,
            head,
            partition,
            freeze: FreezeSpec::default(),
        };
        let inputs = ModalityInputs {
            static_features: vec![0.2],
            hip_embedding: vec![0.3],
            chest_embedding: vec![-0.4],
            vitals_summary: vec![9.0],
            medication: vec![1.0],
        };
        // logit = 0.2 - 0.6 - 0.2 + 0 + 3 + 0.1 = 2.5
        let p = model.predict(&inputs).unwrap();
        assert!((p - crate::util::sigmoid(2.5)).abs() < 1e-12);
    }

    #[test]
    fn predict_monotone_in_logit() {
        let model = MultimodalModel::new_seeded(9);
        let mut low = zero_inputs();
        let mut high = zero_inputs();
        low.medication[0] = -1.0;
        high.medication[0] = 4.0;
        let logit = |inputs: &ModalityInputs| {
            let concat =
                concat_features(&model.encode(inputs).unwrap(), &model.partition).unwrap();
            // reuse the head with its sigmoid swapped for identity
            let mut linear = model.head.clone();
            linear.layers.last_mut().unwrap().activation = Activation::Identity;
            linear.forward(&concat).unwrap()[0]
        };
        let (la, lb) = (logit(&low), logit(&high));
        let (pa, pb) = (
            model.predict(&low).unwrap(),
            model.predict(&high).unwrap(),
        );
        assert_eq!(la < lb, pa < pb);
    }

    #[test]
    fn vitals_summary_hand_values() {
        let series = VitalsSeries {
            start_time: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
            step_seconds: 15.0,
            channels: std::array::from_fn(|ch| {
                if ch == 0 {
                    vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0)]
                } else {
                    vec![None; 4]
                }
            }),
        };
        let s = vitals_summary(&series);
        assert_eq!(s.len(), N_VITALS_SUMMARY);
        assert!((s[0] - 2.5).abs() < 1e-12); // mean
        assert!((s[1] - (1.25f64).sqrt()).abs() < 1e-12); // population sd
        assert_eq!(s[2], 1.0); // min
        assert_eq!(s[3], 4.0); // max
        assert_eq!(s[4], 4.0); // last
        assert!((s[5] - 1.0).abs() < 1e-12); // slope
        assert!(s[6..].iter().all(|&x| x == 0.0)); // empty channels
    }

    #[test]
    fn wrap_then_strip_round_trips() {
        let encoder = MultimodalModel::new_seeded(2).static_encoder;
        let wrapped = unimodal_wrap(&encoder, 7);
        assert_eq!(wrapped.layers.len(), encoder.layers.len() + 1);
        let stripped = unimodal_strip(&wrapped);
        assert_eq!(stripped.params_flat(), encoder.params_flat());
    }

    #[test]
    fn wrapped_model_outputs_probability() {
        let encoder = MultimodalModel::new_seeded(2).vitals_encoder;
        let wrapped = unimodal_wrap(&encoder, 7);
        let p = wrapped.forward(&vec![0.3; N_VITALS_SUMMARY]).unwrap()[0];
        assert!(p > 0.0 && p < 1.0);
    }

    fn toy_training_data(
        n: usize,
        seed: u64,
    ) -> (Vec<LabeledSample<ModalityInputs>>, Vec<LabeledSample<ModalityInputs>>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let make = |rng: &mut ChaCha8Rng, n: usize| {
            (0..n)
                .map(|_| {
                    let mut inputs = zero_inputs();
                    let label = u8::from(rng.gen::<f64>() < 0.5);
                    for v in inputs.static_features.iter_mut() {
                        *v = rng.gen_range(-1.0..1.0) + if label == 1 { 1.0 } else { -1.0 };
                    }
                    for v in inputs
                        .hip_embedding
                        .iter_mut()
                        .chain(inputs.chest_embedding.iter_mut())
                        .chain(inputs.vitals_summary.iter_mut())
                    {
                        *v = rng.gen_range(-1.0..1.0);
                    }
                    (inputs, label)
                })
                .collect::<Vec<_>>()
        };
        (make(&mut rng, n), make(&mut rng, n / 2))
    }

    fn quick_config(seed: u64) -> TrainConfig {
        TrainConfig {
            max_epochs: 4,
            patience: 4,
            dropout: 0.0,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn stage_freeze_keeps_parameters_bit_identical() {
        let (train_set, val_set) = toy_training_data(40, 1);
        let weights = class_weights(
            train_set.len(),
            {
                let pos = train_set.iter().filter(|(_, y)| *y == 1).count();
                (train_set.len() - pos, pos)
            },
        )
        .unwrap();
        let mut model = MultimodalModel::new_seeded(4);
        model.freeze = FreezeSpec::encoders_frozen();
        let before: Vec<Vec<f64>> = [
            &model.static_encoder,
            &model.hip_encoder,
            &model.chest_encoder,
            &model.vitals_encoder,
        ]
        .iter()
        .map(|m| m.params_flat())
        .collect();
        let head_before = model.head.params_flat();
        let (trained, _) =
            crate::nn::train(&model, &train_set, &val_set, &quick_config(1), &weights).unwrap();
        let after: Vec<Vec<f64>> = [
            &trained.static_encoder,
            &trained.hip_encoder,
            &trained.chest_encoder,
            &trained.vitals_encoder,
        ]
        .iter()
        .map(|m| m.params_flat())
        .collect();
        assert_eq!(before, after);
        assert_ne!(head_before, trained.head.params_flat());
    }

    #[test]
    fn staged_train_runs_and_unfreezes_static() {
        let (train_set, val_set) = toy_training_data(40, 2);
        let pos = train_set.iter().filter(|(_, y)| *y == 1).count();
        let weights = class_weights(train_set.len(), (train_set.len() - pos, pos)).unwrap();
        let model = MultimodalModel::new_seeded(5);
        let hip_before = model.hip_encoder.params_flat();
        let static_before = model.static_encoder.params_flat();
        let (trained, report) =
            staged_train(&model, &train_set, &val_set, &quick_config(2), &weights).unwrap();
        assert_eq!(report.unimodal.len(), 4);
        // hip encoder only updated during unimodal pretraining, then frozen:
        // stage-2 output must differ from the random init but the staged model
        // must carry the transfer weights unchanged through both stages
        assert_ne!(trained.hip_encoder.params_flat(), hip_before);
        assert_ne!(trained.static_encoder.params_flat(), static_before);
        assert_eq!(trained.freeze, FreezeSpec::default());
    }

    #[test]
    fn staged_train_is_deterministic() {
        let (train_set, val_set) = toy_training_data(30, 3);
        let pos = train_set.iter().filter(|(_, y)| *y == 1).count();
        let weights = class_weights(train_set.len(), (train_set.len() - pos, pos)).unwrap();
        let model = MultimodalModel::new_seeded(6);
        let (a, _) = staged_train(&model, &train_set, &val_set, &quick_config(3), &weights).unwrap();
        let (b, _) = staged_train(&model, &train_set, &val_set, &quick_config(3), &weights).unwrap();
        assert_eq!(a.head.params_flat(), b.head.params_flat());
        assert_eq!(a.static_encoder.params_flat(), b.static_encoder.params_flat());
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = MultimodalModel::new_seeded(8);
        model.save_bundle(dir.path()).unwrap();
        let loaded = MultimodalModel::load_bundle(dir.path()).unwrap();
        let inputs = zero_inputs();
        assert_eq!(
            model.predict(&inputs).unwrap(),
            loaded.predict(&inputs).unwrap()
        );
        assert_eq!(model.head.params_flat(), loaded.head.params_flat());
        assert_eq!(model.partition, loaded.partition);
    }
}
