//! Self-describing model documents. serde_json emits the shortest decimal
//! that round-trips each f64 exactly, so save/load is loss-free.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::mlp::{DenseLayer, MlpModel};

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    leaky_slope: f64,
    layers: Vec<DenseLayer>,
}

impl MlpModel {
    pub fn to_json(&self) -> String {
        let doc = ModelDocument {
            format: "multishap-mlp".into(),
            version: FORMAT_VERSION,
            leaky_slope: self.leaky_slope,
            layers: self.layers.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format != "multishap-mlp" || doc.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model document {} v{}",
                doc.format, doc.version
            )));
        }
        MlpModel::with_slope(doc.layers, doc.leaky_slope)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::super::mlp::Activation;
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let model = MlpModel::init_chain(&[7, 4, 1], Activation::Sigmoid, &mut rng);
        let restored = MlpModel::from_json(&model.to_json()).unwrap();
        assert_eq!(model.params_flat(), restored.params_flat());
        assert_eq!(model.leaky_slope, restored.leaky_slope);
    }

    #[test]
    fn awkward_floats_survive() {
        let mut model = MlpModel::init_chain(
            &[2, 1],
            Activation::Identity,
            &mut rand_chacha::ChaCha8Rng::seed_from_u64(0),
        );
        model.layers[0].weights = vec![0.1 + 0.2, f64::MIN_POSITIVE];
        model.layers[0].bias = vec![-1.0 / 3.0];
        let restored = MlpModel::from_json(&model.to_json()).unwrap();
        assert_eq!(model.params_flat(), restored.params_flat());
    }

    #[test]
    fn wrong_format_rejected() {
        assert!(MlpModel::from_json("{\"format\":\"other\",\"version\":1,\"leaky_slope\":0.01,\"layers\":[]}").is_err());
    }
}
