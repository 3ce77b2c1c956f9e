use confroute_core::rng::{self, Rng, Stream};
use confroute_core::supervised::{featurize, objective_and_gradient, train_cv, FeatureRow, TrainConfig, Variant};
use proptest::prelude::*;

fn rows(seed: u64, n: usize, dim: usize) -> Vec<FeatureRow> {
    let mut r = rng::stream(seed, Stream::Synthetic);
    let w: Vec<f64> = (0..dim).map(|_| r.gen_range(-2.0..2.0)).collect();
    (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
            let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + r.gen_range(-1.0..1.0);
            FeatureRow { features: x, label: z > 0.0 }
        })
        .collect()
}

fn fast() -> TrainConfig {
    TrainConfig { reg_grid: vec![0.01, 1.0, 100.0], ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), dim in 1usize..6, lambda in 0.0f64..10.0) {
        let data = rows(seed, 30, dim);
        let mut r = rng::stream(seed ^ 1, Stream::Synthetic);
        let params: Vec<f64> = (0..=dim).map(|_| r.gen_range(-1.5..1.5)).collect();
        let (_, grad) = objective_and_gradient(&data, lambda, &params);
        for i in 0..params.len() {
            let h = 1e-6;
            let (mut up, mut down) = (params.clone(), params.clone());
            up[i] += h;
            down[i] -= h;
            let numeric = (objective_and_gradient(&data, lambda, &up).0 - objective_and_gradient(&data, lambda, &down).0) / (2.0 * h);
            let scale = grad[i].abs().max(numeric.abs()).max(1e-3);
            prop_assert!((grad[i] - numeric).abs() / scale < 1e-6, "coord {i}: {} vs {numeric}", grad[i]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn training_ignores_row_order(seed in any::<u64>()) {
        let data = rows(seed, 60, 3);
        let mut shuffled = data.clone();
        rng::shuffle(&mut shuffled, &mut rng::stream(seed, Stream::Mock));
        let a = train_cv(&data, &fast(), Variant::Nm).unwrap();
        let b = train_cv(&shuffled, &fast(), Variant::Nm).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn constant_ks_column_leaves_predictions_unchanged() {
    let data = rows(7, 120, 4);
    let nm = train_cv(&data, &fast(), Variant::Nm).unwrap();
    let pks_rows: Vec<FeatureRow> = data
        .iter()
        .map(|r| FeatureRow { features: featurize(&r.features, Some(0.3), Variant::Pks).unwrap(), label: r.label })
        .collect();
    let pks = train_cv(&pks_rows, &fast(), Variant::Pks).unwrap();
    assert_eq!(pks.reg_strength, nm.reg_strength);
    for (plain, extended) in data.iter().zip(&pks_rows) {
        let a = confroute_core::supervised::predict(&nm, &plain.features).unwrap();
        let b = confroute_core::supervised::predict(&pks, &extended.features).unwrap();
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
}
