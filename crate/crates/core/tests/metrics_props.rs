use confroute_core::evaluation::{auroc, auroc_brute_force, bootstrap_ci, paired_delta, BootstrapConfig};
use proptest::prelude::*;

/// Scores on a coarse grid so ties are common, with both classes present.
fn labeled_scores(max_n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2..=max_n).prop_flat_map(|n| (prop::collection::vec(0u8..8, n), prop::collection::vec(any::<bool>(), n))).prop_map(
        |(grid, mut labels)| {
            labels[0] = true;
            labels[1] = false;
            (grid.into_iter().map(|g| g as f64 / 8.0).collect(), labels)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rank_auroc_matches_pair_counting((scores, labels) in labeled_scores(50)) {
        let fast = auroc(&scores, &labels).unwrap();
        let slow = auroc_brute_force(&scores, &labels).unwrap();
        prop_assert!((fast - slow).abs() <= 1e-12, "{fast} vs {slow}");
    }

    #[test]
    fn invariant_under_increasing_maps((scores, labels) in labeled_scores(50)) {
        let base = auroc(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s - 1.0).exp()).collect();
        prop_assert!((auroc(&mapped, &labels).unwrap() - base).abs() <= 1e-12);
    }

    #[test]
    fn flipping_labels_complements((scores, labels) in labeled_scores(50)) {
        let base = auroc(&scores, &labels).unwrap();
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        prop_assert!((auroc(&scores, &flipped).unwrap() - (1.0 - base)).abs() <= 1e-12);
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auroc(&negated, &labels).unwrap() - (1.0 - base)).abs() <= 1e-12);
    }

    #[test]
    fn bootstrap_is_reproducible((scores, labels) in labeled_scores(40), seed in any::<u64>()) {
        let cfg = BootstrapConfig { samples: 100, seed, ..Default::default() };
        let a = bootstrap_ci(&scores, &labels, &cfg).unwrap();
        let b = bootstrap_ci(&scores, &labels, &cfg).unwrap();
        prop_assert_eq!(a.0.to_bits(), b.0.to_bits());
        prop_assert_eq!(a.1.to_bits(), b.1.to_bits());
        prop_assert!(a.0 <= a.1);
    }

    #[test]
    fn identical_signals_have_null_delta((scores, labels) in labeled_scores(40)) {
        let cfg = BootstrapConfig { samples: 100, ..Default::default() };
        let d = paired_delta(&scores, &scores, &labels, &cfg).unwrap();
        prop_assert_eq!((d.delta, d.lo, d.hi, d.significant), (0.0, 0.0, 0.0, false));
    }
}
