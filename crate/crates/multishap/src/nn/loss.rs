use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Predictions are clamped to `[PRED_CLAMP, 1 - PRED_CLAMP]` inside the loss
/// to avoid log(0).
pub const PRED_CLAMP: f64 = 1e-7;

/// Per-class loss weights `(w_neg, w_pos)` countering class imbalance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub negative: f64,
    pub positive: f64,
}

impl ClassWeights {
    pub fn uniform() -> Self {
        Self {
            negative: 1.0,
            positive: 1.0,
        }
    }

    pub fn for_label(&self, label: u8) -> f64 {
        if label == 0 {
            self.negative
        } else {
            self.positive
        }
    }
}

/// w_c = n_total / (n_classes * n_c) with n_classes = 2.
pub fn class_weights(n_total: usize, counts: (usize, usize)) -> Result<ClassWeights> {
    if counts.0 == 0 || counts.1 == 0 {
        return Err(Error::DegenerateClassDistribution);
    }
    if n_total != counts.0 + counts.1 {
        return Err(Error::InvalidConfig(format!(
            "n_total {} != {} + {}",
            n_total, counts.0, counts.1
        )));
    }
    Ok(ClassWeights {
        negative: n_total as f64 / (2.0 * counts.0 as f64),
        positive: n_total as f64 / (2.0 * counts.1 as f64),
    })
}

pub fn weighted_bce(pred: f64, label: u8, weights: &ClassWeights) -> Result<f64> {
    if !(0.0..=1.0).contains(&pred) || pred.is_nan() {
        return Err(Error::InvalidProbability(pred));
    }
    let p = pred.clamp(PRED_CLAMP, 1.0 - PRED_CLAMP);
    let loss = if label == 1 { -p.ln() } else { -(1.0 - p).ln() };
    Ok(weights.for_label(label) * loss)
}

/// dL/dpred for the clamped weighted BCE.
pub fn weighted_bce_grad(pred: f64, label: u8, weights: &ClassWeights) -> f64 {
    let p = pred.clamp(PRED_CLAMP, 1.0 - PRED_CLAMP);
    let w = weights.for_label(label);
    if label == 1 {
        -w / p
    } else {
        w / (1.0 - p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_classes_give_unit_weights() {
        let w = class_weights(100, (50, 50)).unwrap();
        assert_eq!(w.negative, 1.0);
        assert_eq!(w.positive, 1.0);
    }

    #[test]
    fn imbalanced_cohort_weights() {
        let w = class_weights(1669, (1538, 131)).unwrap();
        assert!((w.negative - 0.5426).abs() < 1e-4);
        assert!((w.positive - 6.3702).abs() < 1e-4);
    }

    #[test]
    fn small_hand_example() {
        let w = class_weights(4, (1, 3)).unwrap();
        assert!((w.negative - 2.0).abs() < 1e-12);
        assert!((w.positive - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_count_class_rejected() {
        assert!(matches!(
            class_weights(10, (10, 0)),
            Err(Error::DegenerateClassDistribution)
        ));
    }

    #[test]
    fn bce_values() {
        let uniform = ClassWeights::uniform();
        assert!((weighted_bce(0.5, 1, &uniform).unwrap() - 2f64.ln()).abs() < 1e-12);
        let w = ClassWeights {
            negative: 1.0,
            positive: 2.0,
        };
        assert!((weighted_bce(0.5, 1, &w).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
        let w = ClassWeights {
            negative: 1.5,
            positive: 1.0,
        };
        assert!((weighted_bce(0.9, 0, &w).unwrap() - 1.5 * -(0.1f64.ln())).abs() < 1e-10);
    }

    #[test]
    fn unit_weights_equal_plain_bce() {
        let uniform = ClassWeights::uniform();
        for (p, y) in [(0.3, 1u8), (0.3, 0), (0.99, 1), (0.01, 0)] {
            let plain = if y == 1 { -(p as f64).ln() } else { -(1.0 - p as f64).ln() };
            assert_eq!(weighted_bce(p, y, &uniform).unwrap(), plain);
        }
    }

    #[test]
    fn out_of_range_pred_rejected() {
        assert!(weighted_bce(1.2, 1, &ClassWeights::uniform()).is_err());
        assert!(weighted_bce(-0.1, 0, &ClassWeights::uniform()).is_err());
    }

    #[test]
    fn extreme_preds_are_clamped_not_infinite() {
        let l = weighted_bce(1.0, 0, &ClassWeights::uniform()).unwrap();
        assert!(l.is_finite());
    }
}
