use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::MlpModel;
use crate::util::KahanSum;

/// Enumeration over all coalitions is capped by default at 20 features.
pub const DEFAULT_EXACT_CAP: usize = 20;
/// Background rows are subsampled (seeded) beyond this many for tractability.
pub const DEFAULT_BACKGROUND_CAP: usize = 64;

/// Reference inputs used to marginalize absent features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackgroundSet {
    pub rows: Vec<Vec<f64>>,
    pub source: String,
}

impl BackgroundSet {
    pub fn new(rows: Vec<Vec<f64>>, source: impl Into<String>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyBackground);
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Format("background rows must share one dimension".into()));
        }
        Ok(Self {
            rows,
            source: source.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    /// Seeded subsample of at most `cap` rows (identity when already small).
    pub fn subsample(&self, cap: usize, seed: u64) -> Self {
        if cap == 0 || self.rows.len() <= cap {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(cap);
        idx.sort_unstable();
        Self {
            rows: idx.into_iter().map(|i| self.rows[i].clone()).collect(),
            source: self.source.clone(),
        }
    }

    pub fn column_mean(&self, col: usize) -> f64 {
        let mut acc = KahanSum::new();
        for r in &self.rows {
            acc.add(r[col]);
        }
        acc.value() / self.rows.len() as f64
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapleyConfig {
    pub exact_cap: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub background_cap: usize,
}

impl Default for ShapleyConfig {
    fn default() -> Self {
        Self {
            exact_cap: DEFAULT_EXACT_CAP,
            n_samples: 200,
            seed: 0,
            background_cap: DEFAULT_BACKGROUND_CAP,
        }
    }
}

/// Shapley values for one scalar function at one input, with the estimator's
/// anchors attached.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionVector {
    pub values: Vec<f64>,
    pub base_value: f64,
    pub prediction: f64,
}

impl AttributionVector {
    pub fn additivity_gap(&self) -> f64 {
        let mut acc = KahanSum::new();
        for &v in &self.values {
            acc.add(v);
        }
        (self.base_value + acc.value() - self.prediction).abs()
    }
}

/// Column `j` holds the Shapley values of every input for output component
/// `j`; each column is additive to `outputs[j] - base_values[j]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionMatrix {
    /// entries[i][j]: attribution of input i to output component j
    pub entries: Vec<Vec<f64>>,
    pub base_values: Vec<f64>,
    pub outputs: Vec<f64>,
}

impl AttributionMatrix {
    pub fn n_inputs(&self) -> usize {
        self.entries.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.base_values.len()
    }
}

/// Interventional value function: mean over background rows of `f` applied to
/// a composite that takes `x` on the subset and the background elsewhere.
pub fn value_function<F>(f: &F, x: &[f64], subset: &[bool], bg: &BackgroundSet) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    debug_assert_eq!(subset.len(), x.len());
    let mut composite = vec![0.0; x.len()];
    let mut sums: Vec<KahanSum> = Vec::new();
    for row in &bg.rows {
        for i in 0..x.len() {
            composite[i] = if subset[i] { x[i] } else { row[i] };
        }
        let out = f(&composite);
        if sums.is_empty() {
            sums = vec![KahanSum::new(); out.len()];
        }
        for (s, v) in sums.iter_mut().zip(out) {
            s.add(v);
        }
    }
    let n = bg.rows.len() as f64;
    sums.into_iter().map(|s| s.value() / n).collect()
}

/// Exact Shapley values of a vector-valued function by enumeration over all
/// 2^n coalitions with the weighted-subset formula. Returns per-input rows of
/// per-output attributions plus the base values and `f(x)`.
pub fn shapley_exact_vec<F>(
    f: &F,
    x: &[f64],
    bg: &BackgroundSet,
    cap: usize,
) -> Result<AttributionMatrix>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    if n > cap {
        return Err(Error::ExactCapExceeded { n, cap });
    }
    if bg.dim() != n {
        return Err(Error::dim("background dim", n, bg.dim()));
    }
    // v(S) for every coalition bitmask
    let mut coalition_values: Vec<Vec<f64>> = Vec::with_capacity(1 << n);
    let mut subset = vec![false; n];
    for mask in 0u32..(1u32 << n) {
        for (i, cell) in subset.iter_mut().enumerate() {
            *cell = mask & (1 << i) != 0;
        }
        coalition_values.push(value_function(f, x, &subset, bg));
    }
    let d = coalition_values[0].len();
    let weights: Vec<f64> = (0..n).map(|s| 1.0 / (n as f64 * binomial(n - 1, s))).collect();

    let mut entries = vec![vec![KahanSum::new(); d]; n];
    for mask in 0u32..(1u32 << n) {
        let size = mask.count_ones() as usize;
        for i in 0..n {
            if mask & (1 << i) != 0 {
                continue;
            }
            let with_i = mask | (1 << i);
            let w = weights[size];
            for j in 0..d {
                entries[i][j]
                    .add(w * (coalition_values[with_i as usize][j] - coalition_values[mask as usize][j]));
            }
        }
    }
    Ok(AttributionMatrix {
        entries: entries
            .into_iter()
            .map(|row| row.into_iter().map(|s| s.value()).collect())
            .collect(),
        base_values: coalition_values[0].clone(),
        outputs: coalition_values[(1usize << n) - 1].clone(),
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Exact Shapley values of a scalar function.
pub fn shapley_exact<F>(f: &F, x: &[f64], bg: &BackgroundSet, cap: usize) -> Result<AttributionVector>
where
    F: Fn(&[f64]) -> f64,
{
    let vector_f = |v: &[f64]| vec![f(v)];
    let m = shapley_exact_vec(&vector_f, x, bg, cap)?;
    Ok(AttributionVector {
        values: m.entries.iter().map(|row| row[0]).collect(),
        base_value: m.base_values[0],
        prediction: m.outputs[0],
    })
}

/// Permutation-sampling Shapley estimate for a vector-valued function.
/// Marginal contributions are averaged over `n_samples` seeded permutations
/// and the background rows, then additively renormalized per output so the
/// attributions sum exactly to `f(x) - base`.
pub fn shapley_sampled_vec<F>(
    f: &F,
    x: &[f64],
    bg: &BackgroundSet,
    n_samples: usize,
    seed: u64,
) -> Result<AttributionMatrix>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    if bg.dim() != n {
        return Err(Error::dim("background dim", n, bg.dim()));
    }
    if n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
    }
    let base = value_function(f, x, &vec![false; n], bg);
    let outputs = f(x);
    let d = outputs.len();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut accum = vec![vec![KahanSum::new(); d]; n];
    let mut subset = vec![false; n];
    for _ in 0..n_samples {
        order.shuffle(&mut rng);
        subset.iter_mut().for_each(|s| *s = false);
        let mut prev = base.clone();
        for (pos, &feature) in order.iter().enumerate() {
            subset[feature] = true;
            // the full coalition needs no background averaging
            let current = if pos + 1 == n {
                outputs.clone()
            } else {
                value_function(f, x, &subset, bg)
            };
            for j in 0..d {
                accum[feature][j].add(current[j] - prev[j]);
            }
            prev = current;
        }
    }
    let mut entries: Vec<Vec<f64>> = accum
        .into_iter()
        .map(|row| row.into_iter().map(|s| s.value() / n_samples as f64).collect())
        .collect();
    // spread the estimator residual uniformly so additivity holds exactly
    for j in 0..d {
        let mut sum = KahanSum::new();
        for row in entries.iter() {
            sum.add(row[j]);
        }
        let residual = (outputs[j] - base[j] - sum.value()) / n as f64;
        for row in entries.iter_mut() {
            row[j] += residual;
        }
    }
    Ok(AttributionMatrix {
        entries,
        base_values: base,
        outputs,
    })
}

/// Permutation-sampling Shapley estimate for a scalar function.
pub fn shapley_sampled<F>(
    f: &F,
    x: &[f64],
    bg: &BackgroundSet,
    n_samples: usize,
    seed: u64,
) -> Result<AttributionVector>
where
    F: Fn(&[f64]) -> f64,
{
    let vector_f = |v: &[f64]| vec![f(v)];
    let m = shapley_sampled_vec(&vector_f, x, bg, n_samples, seed)?;
    Ok(AttributionVector {
        values: m.entries.iter().map(|row| row[0]).collect(),
        base_value: m.base_values[0],
        prediction: m.outputs[0],
    })
}

/// Shapley values of every encoder input for every encoder output component:
/// exact when the input dimension is within the cap, sampled otherwise.
pub fn encoder_attribution_matrix(
    encoder: &MlpModel,
    x: &[f64],
    bg: &BackgroundSet,
    config: &ShapleyConfig,
) -> Result<AttributionMatrix> {
    let f = |v: &[f64]| encoder.forward(v).expect("encoder dims validated by caller");
    if x.len() != encoder.input_dim() {
        return Err(Error::dim("encoder input", encoder.input_dim(), x.len()));
    }
    let bg = bg.subsample(config.background_cap, config.seed);
    if x.len() <= config.exact_cap {
        shapley_exact_vec(&f, x, &bg, config.exact_cap)
    } else {
        shapley_sampled_vec(&f, x, &bg, config.n_samples, config.seed)
    }
}
