//! Metrics and experiment protocol: ROC-AUC via midranks, confusion-matrix
//! metrics, stratified splits, and the repeated cross-validation plan.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{mean, sample_std};

/// ROC-AUC as the Mann-Whitney statistic P(score_pos > score_neg) + P(tie)/2,
/// computed with midranks so ties are handled exactly.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim("roc_auc inputs", scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass {
            context: "roc_auc".into(),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("scores must not be NaN"));
    // midranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// (precision, recall, f1) with the usual 0/0 conventions.
pub fn precision_recall_f1(preds: &[u8], labels: &[u8]) -> (f64, f64, f64) {
    assert_eq!(preds.len(), labels.len());
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.50,
            val_fraction: 0.25,
            test_fraction: 0.25,
            stratified: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-class proportional allocation with a seeded shuffle; the three index
/// sets are disjoint and exhaustive.
pub fn stratified_split(labels: &[u8], spec: &SplitSpec) -> Result<Split> {
    let fractions = [spec.train_fraction, spec.val_fraction, spec.test_fraction];
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|&f| f < 0.0) {
        return Err(Error::InvalidConfig(format!("split fractions {fractions:?} must be nonnegative and sum to 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let groups: Vec<Vec<usize>> = if spec.stratified {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (i, &l) in labels.iter().enumerate() {
            if l == 1 {
                pos.push(i)
            } else {
                neg.push(i)
            }
        }
        let min_needed = fractions.iter().filter(|&&f| f > 0.0).count();
        for class in [&neg, &pos] {
            if class.len() < min_needed.max(1) {
                return Err(Error::ClassTooSmall { count: class.len() });
            }
        }
        vec![neg, pos]
    } else {
        vec![(0..labels.len()).collect()]
    };

    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for mut group in groups {
        group.shuffle(&mut rng);
        let counts = proportional_counts(group.len(), &fractions);
        let (a, b) = (counts[0], counts[0] + counts[1]);
        split.train.extend(&group[..a]);
        split.val.extend(&group[a..b]);
        split.test.extend(&group[b..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Largest-remainder apportionment of `n` items over `fractions`.
fn proportional_counts(n: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut remainders: Vec<(usize, f64)> = exact
        .iter()
        .enumerate()
        .map(|(i, e)| (i, e - e.floor()))
        .collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for k in 0..n - assigned {
        counts[remainders[k % remainders.len()].0] += 1;
    }
    counts
}

/// One (train, validation) assignment of a repeated-CV plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub repeat: usize,
    pub fold: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Repeated stratified k-fold: `n_repeats * k` (train, val) assignments with
/// a per-repeat reshuffle.
pub fn repeated_cv(labels: &[u8], n_repeats: usize, k: usize, seed: u64) -> Result<Vec<FoldAssignment>> {
    if labels.len() < k || k < 2 {
        return Err(Error::InvalidConfig(format!(
            "{} cases cannot form {k} folds",
            labels.len()
        )));
    }
    let mut plan = Vec::with_capacity(n_repeats * k);
    for repeat in 0..n_repeats {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::util::derive_seed(seed, repeat as u64));
        let mut fold_of = vec![0usize; labels.len()];
        for class in [0u8, 1] {
            let mut members: Vec<usize> =
                (0..labels.len()).filter(|&i| labels[i] == class).collect();
            members.shuffle(&mut rng);
            for (pos, idx) in members.into_iter().enumerate() {
                fold_of[idx] = pos % k;
            }
        }
        for fold in 0..k {
            let val: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == fold).collect();
            let train: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] != fold).collect();
            plan.push(FoldAssignment {
                repeat,
                fold,
                train,
                val,
            });
        }
    }
    Ok(plan)
}

/// Mean and standard deviation of each metric over a set of runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_runs: usize,
    pub metrics: Vec<MetricSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

impl RunSummary {
    /// `runs` maps metric name -> per-run values; all metrics must cover the
    /// same number of runs.
    pub fn from_runs(runs: &[(&str, Vec<f64>)]) -> Result<Self> {
        let n_runs = runs.first().map(|(_, v)| v.len()).unwrap_or(0);
        if n_runs == 0 {
            return Err(Error::EmptyInput("run summary".into()));
        }
        let metrics = runs
            .iter()
            .map(|(name, values)| {
                debug_assert_eq!(values.len(), n_runs);
                MetricSummary {
                    name: name.to_string(),
                    mean: mean(values),
                    sd: sample_std(values),
                }
            })
            .collect();
        Ok(Self { n_runs, metrics })
    }

    pub fn get(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.name == name)
    }
}
