use mssi::dsp::{align_source_index, align_to_length, fft_radix2, minmax_normalize, naive_dft, remove_mean};
use proptest::prelude::*;

fn pow2_series() -> impl Strategy<Value = Vec<f64>> {
    (1u32..=9).prop_flat_map(|m| prop::collection::vec(-100.0f64..100.0, 1usize << m))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fft_matches_dft(x in pow2_series()) {
        let fast = fft_radix2(&x).unwrap();
        let slow = naive_dft(&x).unwrap();
        let scale = slow.iter().map(|c| c.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).norm() <= 1e-9 * scale);
        }
    }

    #[test]
    fn parseval(x in pow2_series()) {
        let time: f64 = x.iter().map(|v| v * v).sum();
        let freq: f64 = fft_radix2(&x).unwrap().iter().map(|c| c.norm_sqr()).sum::<f64>() / x.len() as f64;
        prop_assert!((time - freq).abs() <= 1e-9 * time.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn remove_mean_is_idempotent(x in prop::collection::vec(-1e3f64..1e3, 1..300)) {
        let once = remove_mean(&x).unwrap();
        let twice = remove_mean(&once).unwrap();
        let peak = x.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        let mean = once.iter().sum::<f64>() / once.len() as f64;
        prop_assert!(mean.abs() <= 1e-12 * peak);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-12 * peak);
        }
    }

    #[test]
    fn minmax_hits_both_ends(x in prop::collection::vec(-1e6f64..1e6, 2..300)) {
        let y = minmax_normalize(&x).unwrap();
        prop_assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
        let constant = x.iter().all(|v| *v == x[0]);
        if !constant {
            prop_assert!(y.contains(&0.0));
            prop_assert!(y.contains(&1.0));
        }
    }

    #[test]
    fn alignment_is_monotone_and_surjective(l in 1usize..300, extra in 0usize..700) {
        let target = l + extra;
        let v: Vec<f64> = (0..l).map(|i| i as f64).collect();
        let out = align_to_length(&v, target).unwrap();
        prop_assert_eq!(out.len(), target);
        prop_assert_eq!(out[0], v[0]);
        prop_assert!(out.windows(2).all(|w| w[0] <= w[1]));
        let mut seen = vec![false; l];
        for j in 0..target {
            seen[align_source_index(j, l, target)] = true;
        }
        prop_assert!(seen.iter().all(|s| *s));
        prop_assert_eq!(align_to_length(&v, l).unwrap(), v);
    }
}
