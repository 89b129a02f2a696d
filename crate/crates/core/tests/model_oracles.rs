use gridml::contingency::{base_case, enumerate_cases, run_sweep, SweepOptions};
use gridml::dataset::{build_dataset, Mode, Split};
use gridml::fixtures;
use gridml::models::{
    classify_from_regression, fit_forest, fit_knn, fit_ridge, fit_ridge_cv, fit_tree, labels_from_proba, predict_proba,
    predict_regression, train_model, Activation, ForestConfig, MaxFeatures, MlpConfig, MlpModel, MlpTask, ModelKind,
    Node, SurrogateModel, Target, TrainConfig, TreeConfig,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn mlp_gradient_matches_central_differences() {
    let cfg = MlpConfig {
        hidden: vec![6, 5],
        activation: Activation::Tanh,
        alpha: 1e-2,
        ..MlpConfig::default()
    };
    let x = random_matrix(12, 4, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for task in [MlpTask::Regression, MlpTask::Binary] {
        let n_out = if task == MlpTask::Regression { 3 } else { 1 };
        let model = MlpModel::init(4, n_out, task, &cfg, &mut rng);
        let y = match task {
            MlpTask::Regression => random_matrix(12, 3, 3),
            MlpTask::Binary => DMatrix::from_fn(12, 1, |i, _| (i % 2) as f64),
        };
        let (_, grads) = model.backprop(&x, &y);
        let analytic = MlpModel::flat_gradient(&grads);
        let params = model.flat_params();
        let mut probe = model.clone();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let k = rng.random_range(0..params.len());
            let mut p = params.clone();
            p[k] += h;
            probe.set_flat_params(&p);
            let up = probe.objective(&x, &y);
            p[k] -= 2.0 * h;
            probe.set_flat_params(&p);
            let down = probe.objective(&x, &y);
            let numeric = (up - down) / (2.0 * h);
            let rel = (numeric - analytic[k]).abs() / numeric.abs().max(analytic[k].abs()).max(1e-8);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "{task:?}: max relative error {worst}");
    }
}

/// Least squares with intercept via Householder QR on `[1 | X]`.
fn ols_oracle(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let a = DMatrix::from_fn(
        x.nrows(),
        x.ncols() + 1,
        |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] },
    );
    let qr = a.qr();
    let qty = qr.q().transpose() * y;
    qr.r().solve_upper_triangular(&qty).unwrap()
}

#[test]
fn ridge_with_tiny_alpha_matches_least_squares() {
    let x = random_matrix(60, 4, 5);
    let noise = random_matrix(60, 2, 6) * 0.1;
    let w = DMatrix::from_row_slice(4, 2, &[1.0, -2.0, 0.5, 0.0, 3.0, 1.0, -1.0, 0.25]);
    let y = &x * &w + noise;
    let m = fit_ridge(&x, &y, 1e-12).unwrap();
    let beta = ols_oracle(&x, &y);
    for k in 0..2 {
        assert!((m.intercept[k] - beta[(0, k)]).abs() < 1e-6);
        for j in 0..4 {
            assert!((m.weights[(j, k)] - beta[(j + 1, k)]).abs() < 1e-6);
        }
    }
}

#[test]
fn ridge_residual_and_duplicated_columns() {
    let x = random_matrix(40, 5, 8);
    let y1 = random_matrix(40, 1, 9);
    let y = DMatrix::from_fn(40, 2, |i, _| y1[(i, 0)]);
    for alpha in [0.1, 1.0, 10.0] {
        let m = fit_ridge(&x, &y, alpha).unwrap();
        assert!(m.normal_equation_residual(&x, &y) < 1e-8);
        assert_eq!(m.weights.column(0), m.weights.column(1));
    }
}

#[test]
fn ridge_cv_picks_smallest_alpha_on_noiseless_data() {
    let x = random_matrix(50, 3, 10);
    let y = &x * DMatrix::from_row_slice(3, 1, &[2.0, -1.0, 0.5]);
    let m = fit_ridge_cv(&x, &y, &[0.1, 1.0, 10.0], 5, 4).unwrap();
    assert_eq!(m.alpha, 0.1);
    let scores: Vec<f64> = m.cv_scores.iter().map(|s| s.1).collect();
    assert!(scores.windows(2).all(|w| w[0] < w[1]));
}

/// Best threshold by scanning every midpoint, scored by weighted Gini.
fn brute_force_stump(xs: &[f64], ys: &[i8]) -> (f64, f64) {
    let gini = |part: &[i8]| {
        if part.is_empty() {
            return 0.0;
        }
        let p = part.iter().filter(|&&l| l == 1).count() as f64 / part.len() as f64;
        part.len() as f64 * (1.0 - p * p - (1.0 - p) * (1.0 - p))
    };
    let mut sorted: Vec<f64> = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut best = (f64::INFINITY, f64::NAN);
    for w in sorted.windows(2) {
        let t = 0.5 * (w[0] + w[1]);
        let left: Vec<i8> = xs.iter().zip(ys).filter(|(x, _)| **x <= t).map(|(_, y)| *y).collect();
        let right: Vec<i8> = xs.iter().zip(ys).filter(|(x, _)| **x > t).map(|(_, y)| *y).collect();
        let score = gini(&left) + gini(&right);
        if score < best.0 {
            best = (score, t);
        }
    }
    (best.1, best.0)
}

#[test]
fn depth_one_tree_matches_brute_force() {
    let xs = [-2.0, -1.5, -0.7, -0.1, 0.3, 0.8, 1.1, 2.0];
    let ys: Vec<i8> = xs.iter().map(|&x| if x < 0.0 { -1 } else { 1 }).collect();
    let x = DMatrix::from_column_slice(8, 1, &xs);
    let cfg = TreeConfig {
        max_depth: Some(1),
        ..TreeConfig::default()
    };
    let t = fit_tree(&x, Target::Classification(&ys), &cfg, 0).unwrap();
    let (oracle, _) = brute_force_stump(&xs, &ys);
    match &t.nodes[0] {
        Node::Split { threshold, .. } => {
            assert_eq!(*threshold, oracle);
            assert!(*threshold > -0.1 && *threshold < 0.3);
        }
        other => panic!("expected split, got {other:?}"),
    }

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let xs: Vec<f64> = (0..30).map(|_| rng.random_range(-5.0..5.0)).collect();
        let ys: Vec<i8> = xs
            .iter()
            .map(|&x| if x + rng.random_range(-2.0..2.0) > 0.0 { 1 } else { -1 })
            .collect();
        if ys.iter().all(|&l| l == ys[0]) {
            continue;
        }
        let x = DMatrix::from_column_slice(30, 1, &xs);
        let t = fit_tree(&x, Target::Classification(&ys), &cfg, 0).unwrap();
        let (_, oracle_score) = brute_force_stump(&xs, &ys);
        if let Node::Split { threshold, .. } = &t.nodes[0] {
            let left: Vec<i8> = xs
                .iter()
                .zip(&ys)
                .filter(|(x, _)| **x <= *threshold)
                .map(|(_, y)| *y)
                .collect();
            let right: Vec<i8> = xs
                .iter()
                .zip(&ys)
                .filter(|(x, _)| **x > *threshold)
                .map(|(_, y)| *y)
                .collect();
            let g = |p: &[i8]| {
                let q = p.iter().filter(|&&l| l == 1).count() as f64 / p.len().max(1) as f64;
                p.len() as f64 * (1.0 - q * q - (1.0 - q) * (1.0 - q))
            };
            assert!((g(&left) + g(&right) - oracle_score).abs() < 1e-9);
        }
    }
}

#[test]
fn overfit_tree_reproduces_training_targets() {
    let x = random_matrix(30, 3, 13);
    let y = random_matrix(30, 2, 14);
    let m = train_model(ModelKind::Tree, &x, Target::Regression(&y), &TrainConfig::default(), 0).unwrap();
    assert_eq!(predict_regression(&m, &x).unwrap(), y);
}

#[test]
fn knn_extremes() {
    let x = random_matrix(25, 3, 15);
    let labels: Vec<i8> = (0..25).map(|i| if i % 3 == 0 { 1 } else { -1 }).collect();
    let one = SurrogateModel::Knn(fit_knn(&x, Target::Classification(&labels), 1).unwrap());
    assert_eq!(labels_from_proba(&predict_proba(&one, &x).unwrap(), 0.5), labels);

    let y = random_matrix(25, 2, 16);
    let all = fit_knn(&x, Target::Regression(&y), 25).unwrap();
    let pred = all.predict_values(&random_matrix(4, 3, 17));
    for j in 0..2 {
        let mean = y.column(j).sum() / 25.0;
        for i in 0..4 {
            assert!((pred[(i, j)] - mean).abs() < 1e-12);
        }
    }

    // query equidistant to an uncritical (index 0) and a critical point
    let x2 = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
    let m = SurrogateModel::Knn(fit_knn(&x2, Target::Classification(&[-1, 1]), 1).unwrap());
    let p = predict_proba(&m, &DMatrix::from_row_slice(1, 1, &[0.0])).unwrap();
    assert_eq!(p[(0, 1)], 0.0);
}

#[test]
fn single_tree_forest_equals_tree() {
    let x = random_matrix(40, 4, 18);
    let y = random_matrix(40, 2, 19);
    let cfg = ForestConfig {
        n_trees: 1,
        bootstrap: false,
        max_features: Some(MaxFeatures::All),
        ..ForestConfig::default()
    };
    let forest = fit_forest(&x, Target::Regression(&y), &cfg, 3).unwrap();
    let tree = fit_tree(&x, Target::Regression(&y), &TreeConfig::default(), 0).unwrap();
    let q = random_matrix(10, 4, 20);
    assert_eq!(forest.predict_values(&q), tree.predict_values(&q));
}

#[test]
fn forest_is_the_mean_of_its_trees() {
    let x = random_matrix(50, 6, 21);
    let y = random_matrix(50, 3, 22);
    let cfg = ForestConfig {
        n_trees: 7,
        ..ForestConfig::default()
    };
    let forest = fit_forest(&x, Target::Regression(&y), &cfg, 9).unwrap();
    let q = random_matrix(8, 6, 23);
    let mut sum = forest.trees[0].predict_values(&q);
    for t in &forest.trees[1..] {
        sum += t.predict_values(&q);
    }
    assert_eq!(forest.predict_values(&q), sum / 7.0);

    let labels: Vec<i8> = (0..50).map(|i| if x[(i, 0)] > 0.0 { 1 } else { -1 }).collect();
    let cls = SurrogateModel::Forest(fit_forest(&x, Target::Classification(&labels), &cfg, 9).unwrap());
    let p = predict_proba(&cls, &q).unwrap();
    for i in 0..8 {
        assert!((0.0..=1.0).contains(&p[(i, 1)]));
        assert!((p[(i, 0)] + p[(i, 1)] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn batch_prediction_equals_row_by_row() {
    let x = random_matrix(30, 3, 24);
    let y = random_matrix(30, 2, 25);
    let cfg = TrainConfig {
        mlp: MlpConfig {
            max_epochs: 5,
            ..MlpConfig::default()
        },
        forest: ForestConfig {
            n_trees: 5,
            ..ForestConfig::default()
        },
        ..TrainConfig::default()
    };
    for kind in [
        ModelKind::Mlp,
        ModelKind::Ridge,
        ModelKind::Tree,
        ModelKind::Forest,
        ModelKind::Knn,
    ] {
        let m = train_model(kind, &x, Target::Regression(&y), &cfg, 1).unwrap();
        let batch = predict_regression(&m, &x).unwrap();
        for i in 0..30 {
            let row = predict_regression(&m, &x.rows(i, 1).into_owned()).unwrap();
            for j in 0..2 {
                assert!((row[(0, j)] - batch[(i, j)]).abs() < 1e-12, "{kind}");
            }
        }
    }
}

#[test]
fn training_is_deterministic_per_seed() {
    let x = random_matrix(40, 3, 26);
    let y: Vec<i8> = (0..40).map(|i| if x[(i, 1)] > 0.2 { 1 } else { -1 }).collect();
    let cfg = TrainConfig {
        mlp: MlpConfig {
            max_epochs: 30,
            ..MlpConfig::default()
        },
        ..TrainConfig::default()
    };
    for kind in [ModelKind::Mlp, ModelKind::Tree, ModelKind::Forest, ModelKind::Knn] {
        let a = train_model(kind, &x, Target::Classification(&y), &cfg, 5).unwrap();
        let b = train_model(kind, &x, Target::Classification(&y), &cfg, 5).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}

#[test]
fn loading_factor_one_on_true_results_reproduces_labels() {
    let grid = fixtures::demo9();
    let ts = fixtures::mini_year(&grid, 400, 7);
    let cases = enumerate_cases(&grid).cases;
    let steps: Vec<usize> = (0..400).collect();
    let store = run_sweep(&grid, &ts, &cases, &steps, &SweepOptions::default()).unwrap();
    let mut critical = 0;
    for c in &cases {
        let reg = build_dataset(&grid, &ts, &store, c.id, Mode::Regression).unwrap();
        let cls = build_dataset(&grid, &ts, &store, c.id, Mode::Classification).unwrap();
        let y = reg.y_reg.as_ref().unwrap();
        let labels = classify_from_regression(y, grid.n_bus(), &grid.limits, 1.0);
        assert_eq!(&labels, cls.y_cls.as_ref().unwrap());
        critical += labels.iter().filter(|&&l| l == 1).count();
    }
    assert!(critical > 0);
    let base = run_sweep(&grid, &ts, &base_case(), &steps, &SweepOptions::default()).unwrap();
    let ds = build_dataset(&grid, &ts, &base, 0, Mode::Regression).unwrap();
    assert!(ds.split.iter().all(|s| *s == Split::Train));
}

proptest! {
    #[test]
    fn lower_factor_flags_a_superset(
        loads in prop::collection::vec(prop::collection::vec(0.0f64..80.0, 3), 1..20),
        f1 in 0.5f64..1.2,
        df in 0.0f64..0.3,
    ) {
        let limits = fixtures::demo3().limits;
        let y = DMatrix::from_fn(loads.len(), 5, |i, j| if j < 2 { 1.0 } else { loads[i][j - 2] });
        let low = classify_from_regression(&y, 2, &limits, f1);
        let high = classify_from_regression(&y, 2, &limits, (f1 + df).min(1.2));
        for (a, b) in low.iter().zip(&high) {
            prop_assert!(*b != 1 || *a == 1);
        }
    }
}
