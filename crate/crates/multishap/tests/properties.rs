//! Property-based invariants over randomized inputs.

use chrono::{TimeZone, Utc};
use proptest::prelude::*;

use multishap::attribution::{shapley_exact, BackgroundSet};
use multishap::eval::roc_auc;
use multishap::preprocess::{interpolate_gaps, znorm, VitalsSeries};

fn series(channels: [Vec<Option<f64>>; 6]) -> VitalsSeries {
    VitalsSeries {
        start_time: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        step_seconds: 15.0,
        channels,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auc_invariant_under_monotone_transform(
        scores in prop::collection::vec(-10.0f64..10.0, 4..40),
        flips in prop::collection::vec(any::<bool>(), 4..40),
    ) {
        let n = scores.len().min(flips.len());
        let scores = &scores[..n];
        let labels: Vec<u8> = flips[..n].iter().map(|&b| u8::from(b)).collect();
        let pos = labels.iter().filter(|&&l| l == 1).count();
        prop_assume!(pos > 0 && pos < n);
        let base = roc_auc(scores, &labels).unwrap();
        // strictly monotone map: 3x + tanh(x)
        let mapped: Vec<f64> = scores.iter().map(|&s| 3.0 * s + s.tanh()).collect();
        let transformed = roc_auc(&mapped, &labels).unwrap();
        prop_assert!((base - transformed).abs() < 1e-12);
    }

    #[test]
    fn znorm_is_idempotent(
        values in prop::collection::vec(prop::option::weighted(0.8, -100.0f64..100.0), 2..30),
    ) {
        let channels: [Vec<Option<f64>>; 6] = std::array::from_fn(|_| values.clone());
        let (z1, _) = znorm(&series(channels));
        let (z2, _) = znorm(&z1);
        for ch in 0..6 {
            for (a, b) in z1.channels[ch].iter().zip(&z2.channels[ch]) {
                match (a, b) {
                    (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-9),
                    (None, None) => {}
                    _ => prop_assert!(false, "missingness changed"),
                }
            }
        }
    }

    #[test]
    fn interpolation_never_touches_observed(
        values in prop::collection::vec(prop::option::weighted(0.6, -50.0f64..50.0), 3..40),
        max_gap in 1usize..25,
    ) {
        let channels: [Vec<Option<f64>>; 6] = std::array::from_fn(|_| values.clone());
        let s = series(channels);
        let filled = interpolate_gaps(&s, max_gap);
        for ch in 0..6 {
            for (orig, new) in s.channels[ch].iter().zip(&filled.channels[ch]) {
                if let Some(v) = orig {
                    prop_assert_eq!(new.as_ref(), Some(v));
                }
            }
        }
    }

    #[test]
    fn shapley_additivity_holds_exactly(
        weights in prop::collection::vec(-3.0f64..3.0, 1..7),
        x in prop::collection::vec(-2.0f64..2.0, 1..7),
        bg in prop::collection::vec(-2.0f64..2.0, 1..7),
    ) {
        let n = weights.len().min(x.len()).min(bg.len());
        let w = weights[..n].to_vec();
        let f = move |v: &[f64]| {
            v.iter().zip(&w).map(|(vi, wi)| vi * wi).sum::<f64>()
                + v.iter().product::<f64>()
        };
        let bg_set = BackgroundSet::new(vec![bg[..n].to_vec()], "prop").unwrap();
        let attr = shapley_exact(&f, &x[..n], &bg_set, 8).unwrap();
        prop_assert!(attr.additivity_gap() < 1e-9);
    }
}
