use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::KahanSum;

use super::shapley::AttributionMatrix;

const NEAR_ZERO: f64 = 1e-12;

/// Two readings of the chain-rule step that pushes hidden-feature Shapley
/// values back through an encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationMode {
    /// phi_x_i = sum_j Phi[i][j] * (psi_j / AC) with AC = sum_j psi_j.
    Paper,
    /// phi_x_i = sum_j (Phi[i][j] / colsum_j) * psi_j; near-zero columns are
    /// skipped and their psi_j redistributed uniformly, so the raw-input
    /// attributions conserve sum(psi).
    Conserving,
}

impl PropagationMode {
    pub fn name(self) -> &'static str {
        match self {
            PropagationMode::Paper => "paper",
            PropagationMode::Conserving => "conserving",
        }
    }
}

impl std::str::FromStr for PropagationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(PropagationMode::Paper),
            "conserving" => Ok(PropagationMode::Conserving),
            other => Err(Error::InvalidConfig(format!("unknown propagation mode {other:?}"))),
        }
    }
}

/// Propagates a modality's hidden-feature attributions `psi` through the
/// encoder attribution matrix to per-raw-input attributions.
pub fn propagate(matrix: &AttributionMatrix, psi: &[f64], mode: PropagationMode) -> Result<Vec<f64>> {
    if matrix.n_outputs() != psi.len() {
        return Err(Error::dim("propagation psi", matrix.n_outputs(), psi.len()));
    }
    let n = matrix.n_inputs();
    match mode {
        PropagationMode::Paper => {
            let mut ac = KahanSum::new();
            for &p in psi {
                ac.add(p);
            }
            let ac = ac.value();
            if ac.abs() < NEAR_ZERO {
                return Err(Error::VanishingContribution);
            }
            Ok(matrix
                .entries
                .iter()
                .map(|row| {
                    let mut acc = KahanSum::new();
                    for (phi, &p) in row.iter().zip(psi) {
                        acc.add(phi * (p / ac));
                    }
                    acc.value()
                })
                .collect())
        }
        PropagationMode::Conserving => {
            let mut out = vec![KahanSum::new(); n];
            let mut skipped = KahanSum::new();
            for j in 0..psi.len() {
                let mut colsum = KahanSum::new();
                for row in &matrix.entries {
                    colsum.add(row[j]);
                }
                let colsum = colsum.value();
                if colsum.abs() < NEAR_ZERO {
                    skipped.add(psi[j]);
                } else {
                    for (i, row) in matrix.entries.iter().enumerate() {
                        out[i].add(row[j] / colsum * psi[j]);
                    }
                }
            }
            let spread = skipped.value() / n as f64;
            Ok(out.into_iter().map(|s| s.value() + spread).collect())
        }
    }
}
