use std::f64::consts::PI;

use mssi::dsp;
use mssi::features::{build_mssi, multiscale_spectra, stacked_rows, FeatureConfig, Segment, MSSI_LEN};
use proptest::prelude::*;

fn segment() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 2048)
}

fn seg(samples: Vec<f64>) -> Segment {
    Segment { samples, label: None }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pixels_span_unit_interval(x in segment()) {
        let img = build_mssi(&seg(dsp::remove_mean(&x).unwrap()), &FeatureConfig::default()).unwrap();
        prop_assert_eq!(img.pixels().len(), MSSI_LEN);
        prop_assert!(img.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        prop_assert!(img.pixels().contains(&0.0));
        prop_assert!(img.pixels().contains(&1.0));
    }

    #[test]
    fn build_is_deterministic(x in segment()) {
        let cfg = FeatureConfig::default();
        let a = build_mssi(&seg(x.clone()), &cfg).unwrap();
        let b = build_mssi(&seg(x), &cfg).unwrap();
        prop_assert_eq!(a.pixels(), b.pixels());
    }

    #[test]
    fn positive_scaling_does_not_change_the_image(x in segment(), k in 1e-3f64..1e3) {
        let cfg = FeatureConfig::default();
        let base = dsp::remove_mean(&x).unwrap();
        let scaled: Vec<f64> = base.iter().map(|v| v * k).collect();
        let a = build_mssi(&seg(base), &cfg).unwrap();
        let b = build_mssi(&seg(scaled), &cfg).unwrap();
        for (p, q) in a.pixels().iter().zip(b.pixels()) {
            prop_assert!((p - q).abs() <= 1e-9);
        }
    }
}

#[test]
fn finely_resolved_tone_is_sharpest_in_bottom_row() {
    // 201 cycles per 512 samples: on a bin only for the longest window.
    let x: Vec<f64> = (0..2048).map(|n| (2.0 * PI * 201.0 * n as f64 / 512.0).sin()).collect();
    let cfg = FeatureConfig::default();
    let rows = multiscale_spectra(&seg(x.clone()), &cfg).unwrap();
    let spread: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
    let sharpest = spread.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap();
    assert!(sharpest >= 6, "row spreads {spread:?}");

    let stacked = stacked_rows(&seg(x), &cfg).unwrap();
    assert_eq!(stacked.len(), 7 * 256);
}
