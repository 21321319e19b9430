mod common;

use common::{gaussian_classes, log_loss, newton_logreg};
use proptest::prelude::*;
use zonelesion::classify::{
    feature_importances, k_fold_cv, predict_proba, randomized_search, stratified_folds, train, CvMetric,
    ForestParams, GbtHyperparams, GbtSearchSpace, LogregModel, LogregParams, Matrix, ModelKind, ModelParams,
    ModelSpec, Scaler, SvmParams, TrainMatrix, TrainedModel,
};
use zonelesion::classify::Gamma;
use zonelesion::{Error, Zone};

fn descent_hp() -> GbtHyperparams {
    GbtHyperparams {
        colsample_bytree: 1.0,
        gamma: 0.0,
        eta: 0.1,
        max_depth: 3,
        n_estimators: 100,
        subsample: 1.0,
    }
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.rows().map(<[f64]>::to_vec).collect()
}

#[test]
fn unpenalized_logreg_matches_newton_oracle() {
    for seed in 0..3 {
        let data = gaussian_classes(seed, 15, 25, 3, 0.8);
        let spec = ModelSpec::LogregL1(LogregParams {
            lambda: 0.0,
            tol: 1e-10,
            max_iter: 10000,
        });
        let model = train(&spec, &data, 0).unwrap();
        let ModelParams::LogregL1(m) = &model.params else { unreachable!() };
        // back to raw units: w_raw = w / std, b_raw = b - sum(w * mean / std)
        let w_raw: Vec<f64> = m.weights.iter().zip(&m.scaler.std).map(|(w, s)| w / s).collect();
        let b_raw = m.intercept - w_raw.iter().zip(&m.scaler.mean).map(|(w, mu)| w * mu).sum::<f64>();
        let (b, w) = newton_logreg(&rows_of(&data.x), &data.y);
        assert!((b - b_raw).abs() < 1e-4, "intercept {b} vs {b_raw}");
        for (a, o) in w_raw.iter().zip(&w) {
            assert!((a - o).abs() < 1e-4, "weight {a} vs {o}");
        }
    }
}

#[test]
fn zero_weight_logreg_scores_half_and_single_weight_ranks_first() {
    let scaler = Scaler {
        mean: vec![0.0; 26],
        std: vec![1.0; 26],
    };
    let mut m = LogregModel {
        scaler,
        weights: vec![0.0; 26],
        intercept: 0.0,
        sweeps: 0,
    };
    let mut model = TrainedModel {
        zone: Some(Zone::Pz),
        seed: 0,
        n_features: 26,
        spec: ModelSpec::LogregL1(LogregParams::default()),
        params: ModelParams::LogregL1(m.clone()),
    };
    let x = Matrix::new(3, 26, (0..78).map(|v| v as f64).collect()).unwrap();
    assert_eq!(predict_proba(&model, &x).unwrap(), vec![0.5; 3]);

    m.weights[3] = -0.7;
    model.params = ModelParams::LogregL1(m);
    let imp = feature_importances(&model).unwrap();
    assert_eq!(imp.ranking[0], 3);
    assert_eq!(imp.rank_of(3), Some(1));
}

#[test]
fn width_mismatch_is_a_shape_error() {
    let data = gaussian_classes(1, 10, 10, 4, 1.0);
    let model = train(&ModelSpec::Gbt(descent_hp()), &data, 0).unwrap();
    let narrow = Matrix::new(2, 3, vec![0.0; 6]).unwrap();
    assert!(matches!(predict_proba(&model, &narrow), Err(Error::Shape(_))));
}

#[test]
fn svm_duplicate_rows_keep_decision_function() {
    // separable, with C large enough that no multiplier reaches the box
    let data = gaussian_classes(4, 12, 12, 2, 6.0);
    let doubled_rows: Vec<Vec<f64>> = rows_of(&data.x).into_iter().flat_map(|r| [r.clone(), r]).collect();
    let doubled_y: Vec<u8> = data.y.iter().flat_map(|&y| [y, y]).collect();
    let doubled = TrainMatrix::new(Matrix::from_rows(&doubled_rows).unwrap(), doubled_y, None).unwrap();
    let spec = ModelSpec::SvmRbf(SvmParams {
        c: 1e4,
        gamma: Gamma::Value(0.1),
        tol: 1e-10,
        max_iter: None,
    });
    let single = train(&spec, &data, 0).unwrap();
    let double = train(&spec, &doubled, 0).unwrap();
    let (ModelParams::SvmRbf(a), ModelParams::SvmRbf(b)) = (&single.params, &double.params) else { unreachable!() };
    let probe = gaussian_classes(5, 20, 20, 2, 3.0);
    for row in probe.x.rows() {
        assert!((a.decision(row) - b.decision(row)).abs() < 1e-6);
    }
    for row in data.x.rows() {
        assert!(a.decision(row).abs() >= 1.0 - 1e-6);
    }
}

#[test]
fn svm_dual_objective_beats_zero_and_svm_has_no_importances() {
    let data = gaussian_classes(6, 20, 40, 5, 1.0);
    let model = train(&ModelSpec::SvmRbf(SvmParams::default()), &data, 0).unwrap();
    let ModelParams::SvmRbf(m) = &model.params else { unreachable!() };
    assert!(m.dual_objective >= 0.0);
    assert!(m.coef.iter().all(|c| c.abs() <= 0.05 + 1e-12));
    assert!(matches!(feature_importances(&model), Err(Error::Unsupported(_))));
}

#[test]
fn gbt_training_loss_never_increases() {
    for (seed, d) in [(20, 5), (21, 12), (22, 26)] {
        let data = gaussian_classes(seed, 40, 120, d, 0.7);
        let full = train(&ModelSpec::Gbt(descent_hp()), &data, 9).unwrap();
        let ModelParams::Gbt(g) = &full.params else { unreachable!() };
        assert_eq!(g.train_loss.len(), 100);
        // recompute each prefix's loss from scratch
        let mut prev = log_loss(&vec![0.5; data.len()], &data.y);
        for t in 1..=100 {
            let hp = GbtHyperparams { n_estimators: t, ..descent_hp() };
            let m = train(&ModelSpec::Gbt(hp), &data, 9).unwrap();
            let loss = log_loss(&predict_proba(&m, &data.x).unwrap(), &data.y);
            assert!(loss <= prev, "round {t}: {loss} > {prev}");
            assert!((loss - g.train_loss[t - 1]).abs() < 1e-12);
            prev = loss;
        }
    }
}

#[test]
fn every_trainer_is_deterministic_and_seed_sensitive_where_random() {
    let data = gaussian_classes(30, 20, 60, 26, 0.6);
    let specs = [
        ModelSpec::LogregL1(LogregParams::default()),
        ModelSpec::SvmRbf(SvmParams::default()),
        ModelSpec::RandomForest(ForestParams {
            n_trees: 40,
            ..ForestParams::default()
        }),
        ModelSpec::Gbt(GbtHyperparams::for_zone(Zone::Tz)),
    ];
    for spec in &specs {
        let a = train(spec, &data, 3).unwrap();
        let b = train(spec, &data, 3).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let p = predict_proba(&a, &data.x).unwrap();
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let forest = |seed| train(&specs[2], &data, seed).unwrap();
    assert_ne!(forest(3).params, forest(4).params);
}

#[test]
fn forest_importances_sum_to_one() {
    let data = gaussian_classes(31, 30, 90, 26, 0.5);
    for spec in [
        ModelSpec::RandomForest(ForestParams {
            n_trees: 50,
            ..ForestParams::default()
        }),
        ModelSpec::Gbt(GbtHyperparams::for_zone(Zone::Pz)),
    ] {
        let imp = feature_importances(&train(&spec, &data, 1).unwrap()).unwrap();
        assert!((imp.values.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(imp.values.iter().all(|v| *v >= 0.0));
    }
}

#[test]
fn gbt_with_zero_eta_scores_half_at_any_size() {
    let data = gaussian_classes(32, 10, 30, 6, 1.0);
    for n in [1, 17, 120] {
        let hp = GbtHyperparams {
            eta: 0.0,
            n_estimators: n,
            ..descent_hp()
        };
        let m = train(&ModelSpec::Gbt(hp), &data, 2).unwrap();
        assert!(predict_proba(&m, &data.x).unwrap().iter().all(|&p| p == 0.5));
    }
}

#[test]
fn search_with_one_point_returns_it() {
    let data = gaussian_classes(33, 18, 54, 6, 1.0);
    let hp = GbtHyperparams {
        n_estimators: 20,
        ..descent_hp()
    };
    let res = randomized_search(&data, &GbtSearchSpace::point(&hp), 3, 3, 5).unwrap();
    assert_eq!(res.best, hp);
    assert_eq!(res.table.len(), 3);
}

#[test]
fn search_picks_argmax_reproducibly() {
    let data = gaussian_classes(34, 18, 54, 6, 0.8);
    let space = GbtSearchSpace {
        n_estimators: (5, 30),
        ..GbtSearchSpace::default()
    };
    let a = randomized_search(&data, &space, 6, 3, 8).unwrap();
    let b = randomized_search(&data, &space, 6, 3, 8).unwrap();
    assert_eq!(a, b);
    assert!(a.table.iter().all(|r| a.best_score >= r.mean));
    let first_best = a.table.iter().find(|r| r.mean == a.best_score).unwrap();
    assert_eq!(first_best.params, a.best);
}

#[test]
fn cv_reports_one_score_per_fold() {
    let data = gaussian_classes(35, 20, 60, 4, 1.5);
    let spec = ModelSpec::LogregL1(LogregParams::default());
    let res = k_fold_cv(&data, 5, 1, CvMetric::RocAuc, |tr, _| train(&spec, tr, 0)).unwrap();
    assert_eq!(res.fold_scores.len(), 5);
    let mean = res.fold_scores.iter().sum::<f64>() / 5.0;
    assert!((res.mean - mean).abs() < 1e-15);
    assert!(res.mean > 0.7);
    let again = k_fold_cv(&data, 5, 1, CvMetric::RocAuc, |tr, _| train(&spec, tr, 0)).unwrap();
    assert_eq!(res, again);
}

fn labelled_matrix() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<u8>, Vec<Vec<f64>>)> {
    (8usize..30, 2usize..5).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), n),
            prop::collection::vec(0u8..2, n).prop_filter("two of each class", |y| {
                y.iter().filter(|&&v| v == 1).count() >= 2 && y.iter().filter(|&&v| v == 0).count() >= 2
            }),
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), 10),
        )
    })
}

fn matrix(rows: &[Vec<f64>], y: &[u8]) -> TrainMatrix {
    TrainMatrix::new(Matrix::from_rows(rows).unwrap(), y.to_vec(), None).unwrap()
}

fn scale_col(rows: &[Vec<f64>], j: usize, f: impl Fn(f64) -> f64) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().enumerate().map(|(k, &v)| if k == j { f(v) } else { v }).collect())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn trees_ignore_monotone_column_transforms((x, y, test) in labelled_matrix(), j in 0usize..2, seed in 0u64..100) {
        let f = |v: f64| v * v * v + 2.0 * v + 7.0;
        let (a, b) = (matrix(&x, &y), matrix(&scale_col(&x, j, f), &y));
        let (ta, tb) = (Matrix::from_rows(&test).unwrap(), Matrix::from_rows(&scale_col(&test, j, f)).unwrap());
        for spec in [
            ModelSpec::RandomForest(ForestParams { n_trees: 15, ..ForestParams::default() }),
            ModelSpec::Gbt(GbtHyperparams { n_estimators: 15, subsample: 0.8, colsample_bytree: 0.7, ..descent_hp() }),
        ] {
            let pa = predict_proba(&train(&spec, &a, seed).unwrap(), &ta).unwrap();
            let pb = predict_proba(&train(&spec, &b, seed).unwrap(), &tb).unwrap();
            prop_assert_eq!(pa, pb);
        }
    }

    #[test]
    fn logreg_ranking_ignores_column_scale((x, y, test) in labelled_matrix(), j in 0usize..2, c in 0.01f64..100.0) {
        let spec = ModelSpec::LogregL1(LogregParams { lambda: 0.05, ..LogregParams::default() });
        let pa = predict_proba(&train(&spec, &matrix(&x, &y), 0).unwrap(), &Matrix::from_rows(&test).unwrap()).unwrap();
        let scaled = scale_col(&x, j, |v| c * v);
        let pb = predict_proba(
            &train(&spec, &matrix(&scaled, &y), 0).unwrap(),
            &Matrix::from_rows(&scale_col(&test, j, |v| c * v)).unwrap(),
        ).unwrap();
        for i in 0..pa.len() {
            for k in 0..pa.len() {
                // orderings resolved beyond the solver tolerance must agree
                if pa[i] > pa[k] + 1e-5 {
                    prop_assert!(pb[i] > pb[k], "rows {} {}: {:?} vs {:?}", i, k, (pa[i], pa[k]), (pb[i], pb[k]));
                }
            }
        }
    }

    #[test]
    fn folds_are_stratified(y in prop::collection::vec(0u8..2, 6..80), k in 2usize..6, seed in 0u64..1000) {
        let pos = y.iter().filter(|&&v| v == 1).count();
        prop_assume!(pos >= k && y.len() - pos >= k);
        let folds = stratified_folds(&y, k, seed).unwrap();
        let sizes: Vec<usize> = (0..k).map(|f| folds.iter().filter(|&&a| a == f).count()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in 0..k {
            let in_fold = folds.iter().zip(&y).filter(|(&a, &l)| a == f && l == 1).count() as f64;
            prop_assert!((in_fold - pos as f64 / k as f64).abs() <= 1.0);
        }
        prop_assert_eq!(folds, stratified_folds(&y, k, seed).unwrap());
    }
}

#[test]
fn kind_tokens_round_trip() {
    for k in ModelKind::ALL {
        assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
    }
    assert!("svm".parse::<ModelKind>().is_err());
}
