mod common;

use common::*;
use lurk::covariates::CovariateMatrix;
use lurk::evaluation::{
    fit_recipe, monte_carlo_curve, monte_carlo_sample, run_cv, CvPlan, Dataset, ModelRecipe, MonteCarloConfig, Selection,
};
use lurk::kriging::VariogramConfig;
use lurk::monitors::GroupKey;
use rand::Rng;

const PROVINCES: [&str; 5] = ["A", "B", "C", "D", "E"];

fn dataset(seed: u64, n: usize) -> Dataset {
    let mut r = rng(seed);
    let provinces: Vec<String> = (0..n).map(|i| PROVINCES[i % 5].to_string()).collect();
    let coords: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let ox = (i % 5) as f64 * 50_000.0;
            (ox + r.random::<f64>() * 40_000.0, r.random::<f64>() * 40_000.0)
        })
        .collect();
    let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| normal(&mut r)).collect()).collect();
    let y: Vec<f64> = (0..n).map(|i| 20.0 + 3.0 * cols[0][i] - 2.0 * cols[1][i] + normal(&mut r)).collect();
    let site_ids: Vec<String> = (0..n).map(|i| format!("s{i:03}")).collect();
    let x = CovariateMatrix::from_columns(site_ids.clone(), vec!["a".into(), "b".into(), "c".into()], cols).unwrap();
    Dataset {
        site_ids,
        coords,
        cities: provinces.iter().map(|p| format!("{p}1")).collect(),
        provinces,
        y,
        x,
    }
}

fn fixed() -> ModelRecipe {
    ModelRecipe {
        selection: Selection::Fixed {
            columns: vec!["a".into(), "b".into()],
        },
        kriging: None,
        include: None,
        exclude: Vec::new(),
    }
}

// Out-of-fold predictions from an OLS oracle fitted on the training rows.
fn oracle_cv(data: &Dataset, fold_of: &[usize]) -> Vec<f64> {
    let a = data.x.column_by_name("a").unwrap();
    let b = data.x.column_by_name("b").unwrap();
    let mut pred = vec![f64::NAN; data.len()];
    let n_folds = fold_of.iter().max().unwrap() + 1;
    for f in 0..n_folds {
        let train: Vec<usize> = (0..data.len()).filter(|&i| fold_of[i] != f).collect();
        let ta: Vec<f64> = train.iter().map(|&i| a[i]).collect();
        let tb: Vec<f64> = train.iter().map(|&i| b[i]).collect();
        let ty: Vec<f64> = train.iter().map(|&i| data.y[i]).collect();
        let o = ols(&[&ta, &tb], &ty).unwrap();
        for i in (0..data.len()).filter(|&i| fold_of[i] == f) {
            pred[i] = o.beta[0] + o.beta[1] * a[i] + o.beta[2] * b[i];
        }
    }
    pred
}

fn r2(obs: &[f64], pred: &[f64]) -> f64 {
    let m = obs.iter().sum::<f64>() / obs.len() as f64;
    let sse: f64 = obs.iter().zip(pred).map(|(o, p)| (o - p).powi(2)).sum();
    let tss: f64 = obs.iter().map(|o| (o - m).powi(2)).sum();
    1.0 - sse / tss
}

#[test]
fn kfold_matches_scripted_folds() {
    let data = dataset(1, 80);
    let plan = CvPlan::kfold(&data.site_ids, 10, 99).unwrap();
    let sizes: Vec<usize> = plan.folds().iter().map(Vec::len).collect();
    assert!(sizes.iter().all(|&s| s == 8));
    let cv = run_cv(&fixed(), &data, &plan).unwrap();
    let want = oracle_cv(&data, &plan.fold_of);
    for (g, w) in cv.predicted.iter().zip(&want) {
        assert!((g - w).abs() < 1e-9);
    }
    assert!((cv.r2_mse - r2(&data.y, &want)).abs() < 1e-12);
    let rmse = (data.y.iter().zip(&want).map(|(o, p)| (o - p).powi(2)).sum::<f64>() / 80.0).sqrt();
    assert!((cv.rmse - rmse).abs() < 1e-12);
}

#[test]
fn logo_matches_scripted_folds() {
    let data = dataset(2, 60);
    let plan = CvPlan::leave_one_group_out(&data.site_ids, &data.provinces, GroupKey::Province).unwrap();
    assert_eq!(plan.fold_labels, PROVINCES.map(String::from));
    let cv = run_cv(&fixed(), &data, &plan).unwrap();
    let want = oracle_cv(&data, &plan.fold_of);
    for (g, w) in cv.predicted.iter().zip(&want) {
        assert!((g - w).abs() < 1e-9);
    }
    for (i, f) in cv.folds.iter().enumerate() {
        assert_eq!(f, &data.provinces[i]);
    }
}

#[test]
fn held_out_values_never_reach_their_fold() {
    let data = dataset(3, 60);
    // fixed trend so every poisoned training set still fits
    let recipe = fixed().with_kriging(VariogramConfig::default());
    let plan = CvPlan::leave_one_group_out(&data.site_ids, &data.provinces, GroupKey::Province).unwrap();
    let base = run_cv(&recipe, &data, &plan).unwrap();
    for f in 0..plan.n_folds() {
        let mut poisoned = data.clone();
        for i in 0..data.len() {
            if plan.fold_of[i] == f {
                poisoned.y[i] += 1000.0;
            }
        }
        let cv = run_cv(&recipe, &poisoned, &plan).unwrap();
        for i in 0..data.len() {
            if plan.fold_of[i] == f {
                assert_eq!(cv.predicted[i], base.predicted[i]);
            }
        }
    }
}

#[test]
fn nearest_out_of_fold_distances() {
    let data = dataset(4, 50);
    for plan in [
        CvPlan::kfold(&data.site_ids, 5, 3).unwrap(),
        CvPlan::leave_one_group_out(&data.site_ids, &data.provinces, GroupKey::Province).unwrap(),
    ] {
        let got = plan.nn_distances(&data.coords);
        for i in 0..data.len() {
            let want = (0..data.len())
                .filter(|&j| plan.fold_of[j] != plan.fold_of[i])
                .map(|j| dist(data.coords[i], data.coords[j]))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(got[i], want);
        }
    }
    // spatially separated provinces sit further from their nearest training site
    let k = CvPlan::kfold(&data.site_ids, 5, 3).unwrap().nn_distances(&data.coords);
    let l = CvPlan::leave_one_group_out(&data.site_ids, &data.provinces, GroupKey::Province)
        .unwrap()
        .nn_distances(&data.coords);
    let med = |v: &[f64]| lurk::evaluation::median(v);
    assert!(med(&l) > med(&k));
}

#[test]
fn monte_carlo_samples_are_nested() {
    for it in 0..20 {
        let mut prev: Vec<usize> = Vec::new();
        for n in [10, 20, 40, 79] {
            let (train, holdout) = monte_carlo_sample(80, n, 5, it);
            assert_eq!(train.len(), n);
            assert_eq!(holdout.len(), 80 - n);
            assert!(prev.iter().all(|i| train.contains(i)));
            assert!(holdout.iter().all(|i| !train.contains(i)));
            prev = train;
        }
    }
    assert_ne!(monte_carlo_sample(80, 10, 5, 0).0, monte_carlo_sample(80, 10, 5, 1).0);
}

#[test]
fn monte_carlo_fitting_r2_matches_ols() {
    let data = dataset(5, 80);
    let cfg = MonteCarloConfig {
        n_grid: vec![20, 40, 79],
        iterations: 8,
        seed: 11,
        kfold: None,
        logo: None,
    };
    let res = monte_carlo_curve(&fixed(), &data, &cfg).unwrap();
    assert_eq!(res.records.len(), 24);
    assert!(res.failed.is_empty());
    let a = data.x.column_by_name("a").unwrap();
    let b = data.x.column_by_name("b").unwrap();
    for rec in &res.records {
        let (train, holdout) = monte_carlo_sample(80, rec.n, 11, rec.iteration);
        let ta: Vec<f64> = train.iter().map(|&i| a[i]).collect();
        let tb: Vec<f64> = train.iter().map(|&i| b[i]).collect();
        let ty: Vec<f64> = train.iter().map(|&i| data.y[i]).collect();
        let o = ols(&[&ta, &tb], &ty).unwrap();
        assert!((rec.fitting_r2 - o.r2).abs() < 1e-9);
        let pred: Vec<f64> = holdout.iter().map(|&i| o.beta[0] + o.beta[1] * a[i] + o.beta[2] * b[i]).collect();
        let obs: Vec<f64> = holdout.iter().map(|&i| data.y[i]).collect();
        if rec.n == 79 {
            assert!(rec.holdout_r2.is_none());
            assert!((rec.holdout_sq_error.unwrap() - (obs[0] - pred[0]).powi(2)).abs() < 1e-9);
        } else {
            assert!((rec.holdout_r2.unwrap() - r2(&obs, &pred)).abs() < 1e-9);
        }
    }
    let fit20: Vec<f64> = res.records.iter().filter(|r| r.n == 20).map(|r| r.fitting_r2).collect();
    assert_eq!(res.median(20, "fitting_r2"), Some(lurk::evaluation::median(&fit20)));
}

#[test]
fn refit_on_subset_equals_fit_recipe_on_subset() {
    let data = dataset(6, 70);
    let rows: Vec<usize> = (0..70).filter(|i| i % 3 != 0).collect();
    let sub = data.subset(&rows);
    let m = fit_recipe(&ModelRecipe::stepwise(), &sub).unwrap();
    let names: Vec<String> = m.required_columns().to_vec();
    assert!(names.contains(&"a".to_string()) && names.contains(&"b".to_string()));
    let cols: Vec<Vec<f64>> = names.iter().map(|n| sub.x.column_by_name(n).unwrap().to_vec()).collect();
    let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
    let o = ols(&refs, &sub.y).unwrap();
    let row: Vec<f64> = cols.iter().map(|c| c[0]).collect();
    let want = o.beta[0] + row.iter().zip(&o.beta[1..]).map(|(x, b)| x * b).sum::<f64>();
    assert!((m.predict_one(0.0, 0.0, &row).unwrap() - want).abs() < 1e-9);
}
