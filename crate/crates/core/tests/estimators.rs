use codsa_core::dataset::{Dataset, Target};
use codsa_core::estimators::{brute_force_split, grow_tree, train_forest, ClassifierModel, ForestConfig};
use codsa_core::nncore::{loss_logistic_logits, Head, Mlp, MlpSpec};
use codsa_core::rng::SeedStream;
use codsa_core::scaling::Standardizer;
use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn root_split_matches_exhaustive_search() {
    for case in 0..20u64 {
        let mut rng = SeedStream::new(100 + case).rng();
        let x = Array2::from_shape_simple_fn((5, 3), || rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let tree = grow_tree(&x, &y, &ForestConfig { n_trees: 1, bootstrap: false, ..Default::default() }).unwrap();
        let (f, thr, _) = brute_force_split(&x, &y).unwrap();
        assert_eq!(tree.nodes[0].feature, Some(f), "case {case}");
        assert_eq!(tree.nodes[0].threshold, thr, "case {case}");
    }
}

#[test]
fn single_unbootstrapped_tree_forest_equals_tree() {
    let mut rng = SeedStream::new(7).rng();
    let x = Array2::from_shape_simple_fn((5, 2), || rng.random_range(0.0..1.0));
    let y = Array1::from_shape_simple_fn(5, || rng.random_range(0.0..1.0));
    let d = Dataset::new(x.clone(), Target::Continuous(y.clone()), vec![1; 5], 1).unwrap();
    let cfg = ForestConfig { n_trees: 1, bootstrap: false, ..Default::default() };
    let f = train_forest(&d, &cfg, SeedStream::new(1)).unwrap();
    let t = grow_tree(&x, y.as_slice().unwrap(), &cfg).unwrap();
    assert_eq!(f.trees[0], t);
}

#[test]
fn forest_interpolates_noiseless_function() {
    let mut rng = SeedStream::new(8).rng();
    let x: Array2<f64> = Array2::from_shape_simple_fn((1500, 2), || rng.random_range(-2.0..2.0));
    let y: Array1<f64> = x.rows().into_iter().map(|r| r[0].sin() + 0.5 * r[1] * r[1]).collect();
    let d = Dataset::new(x.clone(), Target::Continuous(y.clone()), vec![1; 1500], 1).unwrap();
    let f = train_forest(&d, &ForestConfig { n_trees: 30, ..Default::default() }, SeedStream::new(2)).unwrap();
    let p = f.predict(x.view()).unwrap();
    let rmse = (p.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 1500.0).sqrt();
    assert!(rmse <= 0.1 * y.std(0.0), "rmse {rmse} vs sd {}", y.std(0.0));
    let g = train_forest(&d, &ForestConfig { n_trees: 30, ..Default::default() }, SeedStream::new(2)).unwrap();
    assert_eq!(f, g);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forest_predictions_stay_within_target_range(
        ys in prop::collection::vec(-100.0f64..100.0, 6..40),
        seed in 0u64..500,
        queries in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..10),
    ) {
        let n = ys.len();
        let mut rng = SeedStream::new(seed).rng();
        let x = Array2::from_shape_simple_fn((n, 2), || rng.random_range(-3.0..3.0));
        let d = Dataset::new(x, Target::Continuous(Array1::from(ys.clone())), vec![1; n], 1).unwrap();
        let f = train_forest(&d, &ForestConfig { n_trees: 7, ..Default::default() }, SeedStream::new(seed)).unwrap();
        let q = Array2::from_shape_fn((queries.len(), 2), |(i, j)| if j == 0 { queries[i].0 } else { queries[i].1 });
        let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for p in f.predict(q.view()).unwrap() {
            prop_assert!(p >= lo - 1e-9 && p <= hi + 1e-9);
        }
    }
}

fn random_classifier(seed: u64) -> ClassifierModel {
    let mut rng = SeedStream::new(seed).rng();
    let net = Mlp::new(MlpSpec::new(vec![4, 6, 6, 1], Head::Sigmoid).unwrap(), &mut rng).unwrap();
    ClassifierModel { net, scaler: Standardizer::identity(4), best_epoch: 0, best_val_loss: 0.0, constant: false }
}

#[test]
fn raising_final_bias_raises_every_probability() {
    for seed in 0..10 {
        let mut m = random_classifier(seed);
        let mut rng = SeedStream::new(1000 + seed).rng();
        let rows = Array2::from_shape_simple_fn((30, 4), || rng.random_range(-2.0..2.0));
        let before = m.predict_proba(rows.view()).unwrap();
        let last = m.net.n_layers() - 1;
        m.net.biases_mut()[last][0] += 0.5;
        let after = m.predict_proba(rows.view()).unwrap();
        assert!(before.iter().zip(&after).all(|(a, b)| b > a));
    }
}

#[test]
fn predictions_are_row_wise() {
    let m = random_classifier(3);
    let mut rng = SeedStream::new(4).rng();
    let rows = Array2::from_shape_simple_fn((25, 4), || rng.random_range(-2.0..2.0));
    let p = m.predict_proba(rows.view()).unwrap();
    let perm: Vec<usize> = (0..25).rev().collect();
    let q = m.predict_proba(rows.select(Axis(0), &perm).view()).unwrap();
    for (i, &j) in perm.iter().enumerate() {
        assert!((q[i] - p[j]).abs() < 1e-15);
    }
    assert!(m.predict_proba(Array2::zeros((2, 3)).view()).is_err());
}

#[test]
fn duplicating_rows_leaves_mean_loss_unchanged() {
    let m = random_classifier(5);
    let mut rng = SeedStream::new(6).rng();
    let rows = Array2::from_shape_simple_fn((40, 4), || rng.random_range(-2.0..2.0));
    let labels: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
    let logits = m.net.logits(rows.view()).unwrap().column(0).to_vec();
    let (base, _) = loss_logistic_logits(&logits, &labels).unwrap();
    let twice: Vec<f64> = logits.iter().chain(&logits).copied().collect();
    let labels2: Vec<f64> = labels.iter().chain(&labels).copied().collect();
    let (dup, _) = loss_logistic_logits(&twice, &labels2).unwrap();
    assert!((base - dup).abs() < 1e-14);
}
