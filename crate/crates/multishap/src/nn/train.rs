use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::roc_auc;
use crate::util::kahan_sum;

use super::loss::{weighted_bce, weighted_bce_grad, ClassWeights};
use super::mlp::MlpModel;

pub type LabeledSample<I> = (I, u8);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr_halving_patience: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub l2_weight: f64,
    pub seed: u64,
    pub leaky_slope: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            max_epochs: 100,
            patience: 10,
            lr_halving_patience: 5,
            batch_size: 32,
            dropout: 0.3,
            l2_weight: 1e-3,
            seed: 0,
            leaky_slope: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.learning_rate <= 0.0 || self.l2_weight < 0.0 || self.leaky_slope <= 0.0 {
            return Err(Error::InvalidConfig("learning_rate and leaky_slope must be positive, l2_weight nonnegative".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidConfig("batch_size and max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Anything trainable by mini-batch gradient descent on weighted BCE:
/// plain MLPs and the fused multimodal network both implement this.
pub trait DifferentiableModel: Clone {
    type Input;

    /// Deterministic probability output (dropout disabled).
    fn predict_prob(&self, x: &Self::Input) -> Result<f64>;

    fn param_count(&self) -> usize;
    fn params_flat(&self) -> Vec<f64>;
    fn set_params_flat(&mut self, flat: &[f64]);

    /// Parameters excluded from updates (frozen groups). Default: none.
    fn frozen_mask(&self) -> Vec<bool> {
        vec![false; self.param_count()]
    }

    /// Parameters subject to the L2 penalty (weights, not biases).
    fn l2_mask(&self) -> Vec<bool>;

    /// Mean weighted BCE over the batch plus `l2 * sum(w^2)`, with exact
    /// backprop gradients in flat layout. `rng` drives dropout masks only;
    /// it is not touched when `dropout == 0`.
    fn loss_and_grad(
        &self,
        batch: &[&LabeledSample<Self::Input>],
        weights: &ClassWeights,
        l2: f64,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<f64>)>;
}

impl DifferentiableModel for MlpModel {
    type Input = Vec<f64>;

    fn predict_prob(&self, x: &Self::Input) -> Result<f64> {
        let out = self.forward(x)?;
        if out.len() != 1 {
            return Err(Error::dim("scalar prediction", 1, out.len()));
        }
        Ok(out[0])
    }

    fn param_count(&self) -> usize {
        MlpModel::param_count(self)
    }

    fn params_flat(&self) -> Vec<f64> {
        MlpModel::params_flat(self)
    }

    fn set_params_flat(&mut self, flat: &[f64]) {
        MlpModel::set_params_flat(self, flat)
    }

    fn l2_mask(&self) -> Vec<bool> {
        self.weight_mask()
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
        let mut losses = Vec::with_capacity(batch.len());
        for (x, label) in batch.iter().map(|s| (&s.0, s.1)) {
            let masks = sample_dropout_masks(self, dropout, rng);
            let cache = self.forward_cached(x, &masks)?;
            let pred = cache.activations.last().unwrap()[0];
            losses.push(weighted_bce(pred, label, weights)?);
            let dpred = weighted_bce_grad(pred, label, weights) / n;
            self.backward(&cache, &[dpred], &mut grads);
        }
        let mut loss = kahan_sum(losses) / n;
        loss += apply_l2(&mut grads, &self.params_flat(), &self.l2_mask(), l2);
        Ok((loss, grads))
    }
}

/// Inverted-dropout masks for the hidden layers of an MLP; `None` per layer
/// when dropout is off.
pub(crate) fn sample_dropout_masks(
    model: &MlpModel,
    dropout: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Option<Vec<f64>>> {
    if dropout <= 0.0 || model.layers.len() < 2 {
        return vec![None; model.layers.len()];
    }
    let keep = 1.0 - dropout;
    let scale = 1.0 / keep;
    model
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if i + 1 == model.layers.len() {
                None
            } else {
                Some(
                    (0..l.out_dim)
                        .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
                        .collect(),
                )
            }
        })
        .collect()
}

/// Adds `l2 * 2θ` to weight gradients and returns the penalty term `l2 * Σθ²`.
pub(crate) fn apply_l2(grads: &mut [f64], params: &[f64], l2_mask: &[bool], l2: f64) -> f64 {
    if l2 == 0.0 {
        return 0.0;
    }
    let mut penalty = 0.0;
    for i in 0..grads.len() {
        if l2_mask[i] {
            penalty += params[i] * params[i];
            grads[i] += 2.0 * l2 * params[i];
        }
    }
    l2 * penalty
}

/// Exact backprop gradients of mean weighted BCE + L2 penalty over a batch
/// (no dropout). Returns (loss, flat gradients).
pub fn gradient<M: DifferentiableModel>(
    model: &M,
    batch: &[&LabeledSample<M::Input>],
    weights: &ClassWeights,
    l2: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    model.loss_and_grad(batch, weights, l2, 0.0, &mut rng)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, frozen: &[bool]) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            if frozen[i] {
                continue;
            }
            let g = grads[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

const IMPROVEMENT_EPS: f64 = 1e-6;

/// Mini-batch Adam with validation-AUC early stopping and LR halving.
/// Returns the parameters from the best-AUC epoch. Deterministic given
/// `config.seed`.
pub fn train<M: DifferentiableModel>(
    model: &M,
    train_set: &[LabeledSample<M::Input>],
    val_set: &[LabeledSample<M::Input>],
    config: &TrainConfig,
    weights: &ClassWeights,
) -> Result<(M, TrainHistory)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyInput("train/validation set".into()));
    }
    for (set, name) in [(train_set, "training set"), (val_set, "validation set")] {
        let pos = set.iter().filter(|s| s.1 == 1).count();
        if pos == 0 || pos == set.len() {
            return Err(Error::SingleClass { context: name.into() });
        }
    }

    let mut model = model.clone();
    let mut params = model.params_flat();
    let frozen = model.frozen_mask();
    let mut adam = Adam::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut lr = config.learning_rate;

    let mut history = Vec::new();
    let mut best_params = params.clone();
    let mut best_auc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut since_improve = 0usize;
    let mut since_lr_cut = 0usize;

    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.max_epochs {
        indices.shuffle(&mut rng);
        let mut epoch_losses = Vec::new();
        for chunk in indices.chunks(config.batch_size) {
            let batch: Vec<&LabeledSample<M::Input>> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = model.loss_and_grad(
                &batch,
                weights,
                config.l2_weight,
                config.dropout,
                &mut rng,
            )?;
            adam.step(&mut params, &grads, lr, &frozen);
            model.set_params_flat(&params);
            epoch_losses.push(loss);
        }
        let scores: Vec<f64> = val_set
            .iter()
            .map(|s| model.predict_prob(&s.0))
            .collect::<Result<_>>()?;
        let labels: Vec<u8> = val_set.iter().map(|s| s.1).collect();
        let val_auc = roc_auc(&scores, &labels)?;
        history.push(EpochStats {
            epoch,
            train_loss: kahan_sum(epoch_losses.iter().copied()) / epoch_losses.len() as f64,
            val_auc,
            learning_rate: lr,
        });
        if val_auc > best_auc + IMPROVEMENT_EPS {
            best_auc = val_auc;
            best_params = params.clone();
            best_epoch = epoch;
            since_improve = 0;
            since_lr_cut = 0;
        } else {
            since_improve += 1;
            since_lr_cut += 1;
            if since_lr_cut >= config.lr_halving_patience.max(1) {
                lr *= 0.5;
                since_lr_cut = 0;
            }
            if since_improve >= config.patience.max(1) {
                break;
            }
        }
    }
    model.set_params_flat(&best_params);
    Ok((
        model,
        TrainHistory {
            epochs: history,
            best_epoch,
            best_val_auc: best_auc,
        },
    ))
}
