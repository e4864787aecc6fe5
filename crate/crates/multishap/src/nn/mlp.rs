use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64, leaky_slope: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z >= 0.0 {
                    z
                } else {
                    leaky_slope * z
                }
            }
            Activation::Sigmoid => crate::util::sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed in terms of the pre-activation `z` and the
    /// activation output `a`.
    pub fn derivative(self, z: f64, a: f64, leaky_slope: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z >= 0.0 {
                    1.0
                } else {
                    leaky_slope
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    Activation::LeakyRelu.apply(x, slope)
}

/// A fully connected layer. Weights are row-major with shape
/// `(out_dim, in_dim)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// He-style uniform init scaled by fan-in.
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Dense feed-forward network. Encoders and fusion heads are both `MlpModel`s.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<DenseLayer>,
    pub leaky_slope: f64,
}

/// Per-layer intermediates kept for backprop: pre-activations, activations,
/// and the dropout mask applied to each hidden layer's output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    pub pre_activations: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
    pub dropout_masks: Vec<Option<Vec<f64>>>,
}

impl MlpModel {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        Self::with_slope(layers, 0.01)
    }

    pub fn with_slope(layers: Vec<DenseLayer>, leaky_slope: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyInput("MlpModel needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::dim(
                    "adjacent layer dims",
                    pair[0].out_dim,
                    pair[1].in_dim,
                ));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::dim(
                    format!("layer {i} parameter shape"),
                    l.in_dim * l.out_dim,
                    l.weights.len(),
                ));
            }
            if l.weights.iter().chain(l.bias.iter()).any(|w| !w.is_finite()) {
                return Err(Error::NonFinite { layer: i });
            }
        }
        Ok(Self { layers, leaky_slope })
    }

    /// Builds a seeded network from a dim chain, e.g. `[76, 16]` or `[81, 64, 1]`.
    /// Hidden layers use leaky-ReLU; the final activation is given explicitly.
    pub fn init_chain<R: Rng>(dims: &[usize], final_activation: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let act = if i + 2 == dims.len() {
                final_activation
            } else {
                Activation::LeakyRelu
            };
            layers.push(DenseLayer::init(dims[i], dims[i + 1], act, rng));
        }
        Self {
            layers,
            leaky_slope: 0.01,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    /// Deterministic layer-by-layer evaluation with dropout disabled.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward_cached(x, &[])?;
        Ok(cache.activations.into_iter().last().unwrap())
    }

    /// Forward pass retaining intermediates. `dropout_masks` holds one mask per
    /// hidden layer (empty slice = no dropout); masks are pre-scaled by
    /// `1/(1-p)` (inverted dropout).
    pub fn forward_cached(&self, x: &[f64], dropout_masks: &[Option<Vec<f64>>]) -> Result<ForwardCache> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("forward input", self.input_dim(), x.len()));
        }
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = layer.bias.clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (w, xi) in row.iter().zip(&current) {
                    *zo += w * xi;
                }
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: li });
            }
            let mut a: Vec<f64> = z
                .iter()
                .map(|&zv| layer.activation.apply(zv, self.leaky_slope))
                .collect();
            let mask = if li + 1 < self.layers.len() {
                dropout_masks.get(li).cloned().flatten()
            } else {
                None
            };
            if let Some(m) = &mask {
                for (av, mv) in a.iter_mut().zip(m) {
                    *av *= mv;
                }
            }
            pre_activations.push(z);
            current = a.clone();
            activations.push(a);
            masks.push(mask);
        }
        Ok(ForwardCache {
            input: x.to_vec(),
            pre_activations,
            activations,
            dropout_masks: masks,
        })
    }

    /// Backprop from `grad_output` (dL/d output) through the cached forward
    /// pass. Accumulates parameter gradients into `grads` (flat layout, see
    /// [`MlpModel::params_flat`]) and returns dL/d input.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64], grads: &mut [f64]) -> Vec<f64> {
        assert_eq!(grad_output.len(), self.output_dim());
        assert_eq!(grads.len(), self.param_count());
        let mut delta = grad_output.to_vec();
        let mut offset = self.param_count();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            offset -= layer.param_count();
            // undo dropout scaling, then activation derivative
            if let Some(mask) = &cache.dropout_masks[li] {
                for (d, m) in delta.iter_mut().zip(mask) {
                    *d *= m;
                }
            }
            let z = &cache.pre_activations[li];
            let a_raw: Vec<f64> = z
                .iter()
                .map(|&zv| layer.activation.apply(zv, self.leaky_slope))
                .collect();
            for o in 0..layer.out_dim {
                delta[o] *= layer.activation.derivative(z[o], a_raw[o], self.leaky_slope);
            }
            let input = if li == 0 {
                &cache.input
            } else {
                &cache.activations[li - 1]
            };
            let (w_grads, b_grads) =
                grads[offset..offset + layer.param_count()].split_at_mut(layer.weights.len());
            let mut grad_in = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let d = delta[o];
                b_grads[o] += d;
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let g_row = &mut w_grads[o * layer.in_dim..(o + 1) * layer.in_dim];
                for i in 0..layer.in_dim {
                    g_row[i] += d * input[i];
                    grad_in[i] += d * row[i];
                }
            }
            delta = grad_in;
        }
        delta
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Flat parameter layout: per layer, weights (row-major) then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
    }

    /// Flat mask marking weight entries (true) vs bias entries (false), used
    /// to restrict the L2 penalty to weights.
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(std::iter::repeat(true).take(l.weights.len()));
            out.extend(std::iter::repeat(false).take(l.bias.len()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_layer(dim: usize) -> DenseLayer {
        let mut l = DenseLayer::zeros(dim, dim, Activation::Identity);
        for i in 0..dim {
            l.weights[i * dim + i] = 1.0;
        }
        l
    }

    #[test]
    fn identity_network_passes_input_through() {
        let model = MlpModel::new(vec![identity_layer(2)]).unwrap();
        assert_eq!(model.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_sigmoid_neuron_outputs_half() {
        let model = MlpModel::new(vec![DenseLayer::zeros(3, 1, Activation::Sigmoid)]).unwrap();
        assert_eq!(model.forward(&[5.0, -1.0, 0.3]).unwrap(), vec![0.5]);
    }

    #[test]
    fn two_layer_net_matches_hand_computation() {
        // layer 1: W = [[1, -1], [0.5, 2]], b = (0.1, -0.2), leaky-relu slope 0.01
        // layer 2: W = [[2, 1]], b = 0.5, identity
        let l1 = DenseLayer {
            in_dim: 2,
            out_dim: 2,
            weights: vec![1.0, -1.0, 0.5, 2.0],
            bias: vec![0.1, -0.2],
            activation: Activation::LeakyRelu,
        };
        let l2 = DenseLayer {
            in_dim: 2,
            out_dim: 1,
            weights: vec![2.0, 1.0],
            bias: vec![0.5],
            activation: Activation::Identity,
        };
        let model = MlpModel::new(vec![l1, l2]).unwrap();
        // x = (1, 2): z1 = (1-2+0.1, 0.5+4-0.2) = (-0.9, 4.3)
        // a1 = (-0.009, 4.3); out = 2*(-0.009) + 4.3 + 0.5 = 4.782
        let y = model.forward(&[1.0, 2.0]).unwrap();
        assert!((y[0] - 4.782).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let model = MlpModel::new(vec![identity_layer(2)]).unwrap();
        assert!(matches!(
            model.forward(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn leaky_relu_values() {
        assert_eq!(leaky_relu(3.0, 0.01), 3.0);
        assert_eq!(leaky_relu(-2.0, 0.01), -0.02);
        assert_eq!(leaky_relu(0.0, 0.3), 0.0);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        use rand::SeedableRng;
        let model = MlpModel::init_chain(&[4, 3, 1], Activation::Sigmoid, &mut rng);
        let x = [0.3, -1.2, 0.0, 2.5];
        let a = model.forward(&x).unwrap();
        let b = model.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_chain_rejected() {
        let l1 = DenseLayer::zeros(2, 3, Activation::Identity);
        let l2 = DenseLayer::zeros(4, 1, Activation::Identity);
        assert!(MlpModel::new(vec![l1, l2]).is_err());
    }
}
