mod common;

use common::*;
use rand::Rng;
use lurk::covariates::CovariateMatrix;
use lurk::lur::{morans_i, ols_fit, pls_fit, pls_fit_components, stepwise_select, vif, StepwiseConfig};
use proptest::prelude::*;

fn matrix(names: &[String], cols: &[Vec<f64>]) -> CovariateMatrix {
    let ids = (0..cols[0].len()).map(|i| format!("s{i}")).collect();
    CovariateMatrix::from_columns(ids, names.to_vec(), cols.to_vec()).unwrap()
}

#[test]
fn ols_matches_normal_equations() {
    for seed in 0..10 {
        let (_, cols, y) = stepwise_instance(seed, 40);
        let refs: Vec<&[f64]> = cols[..5].iter().map(|c| c.as_slice()).collect();
        let fit = ols_fit(&refs, &y, None).unwrap();
        let oracle = ols(&refs, &y).unwrap();
        assert!((fit.intercept - oracle.beta[0]).abs() < 1e-9);
        for j in 0..5 {
            assert!((fit.coefficients[j] - oracle.beta[j + 1]).abs() < 1e-9);
            assert!((fit.p_values[j] - oracle.p_values[j + 1]).abs() < 1e-9);
        }
        assert!((fit.rss - oracle.rss).abs() < 1e-8 * oracle.rss);
    }
}

#[test]
fn vif_matches_auxiliary_regression() {
    let (_, cols, _) = stepwise_instance(3, 60);
    let inc: Vec<&[f64]> = vec![&cols[0], &cols[1], &cols[2]];
    for cand in [&cols[6], &cols[7], &cols[4]] {
        let got = vif(cand, &inc).unwrap();
        let want = common::vif(cand, &inc);
        assert!((got - want).abs() < 1e-8 * want, "{got} vs {want}");
    }
}

#[test]
fn stepwise_path_matches_exhaustive_greedy() {
    let cfg = StepwiseConfig::default();
    for seed in 0..50 {
        let (names, cols, y) = stepwise_instance(seed, 60);
        let model = stepwise_select(&matrix(&names, &cols), &y, &cfg).unwrap();
        let oracle = stepwise_oracle(&names, &cols, &y, cfg.vif_max, cfg.p_max, cfg.min_adj_r2_gain).unwrap();
        assert_eq!(model.selected, oracle.names, "seed {seed}");
        assert!((model.intercept - oracle.beta[0]).abs() <= 1e-8 * (1.0 + oracle.beta[0].abs()));
        for (c, o) in model.coefficients.iter().zip(&oracle.beta[1..]) {
            assert!((c - o).abs() <= 1e-8 * (1.0 + o.abs()), "seed {seed}: {c} vs {o}");
        }
    }
}

#[test]
fn stepwise_invariants_hold() {
    let cfg = StepwiseConfig::default();
    for seed in 0..20 {
        let (names, cols, y) = stepwise_instance(100 + seed, 60);
        let model = stepwise_select(&matrix(&names, &cols), &y, &cfg).unwrap();
        for w in model.path.windows(2) {
            assert!(w[1].adj_r2 >= w[0].adj_r2);
        }
        for step in &model.path {
            assert!(step.vif < cfg.vif_max && step.p_value < cfg.p_max);
        }
        for (c, s) in model.coefficients.iter().zip(&model.entry_signs) {
            assert_eq!(c.signum() as i8, *s);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn column_scaling_keeps_path(seed in 0u64..1000, col in 0usize..8, scale in 0.01..100.0f64) {
        let (names, mut cols, y) = stepwise_instance(seed, 60);
        let cfg = StepwiseConfig::default();
        let base = stepwise_select(&matrix(&names, &cols), &y, &cfg).unwrap();
        cols[col].iter_mut().for_each(|v| *v *= scale);
        let scaled = stepwise_select(&matrix(&names, &cols), &y, &cfg).unwrap();
        prop_assert_eq!(&base.selected, &scaled.selected);
        for (k, name) in base.selected.iter().enumerate() {
            let f = if *name == names[col] { 1.0 / scale } else { 1.0 };
            prop_assert!((scaled.coefficients[k] - base.coefficients[k] * f).abs() <= 1e-7 * base.coefficients[k].abs().max(1e-12));
        }
    }
}

#[test]
fn full_rank_pls_equals_ols() {
    for seed in 0..5 {
        let (names, cols, y) = stepwise_instance(seed, 50);
        let x = matrix(&names, &cols);
        let pls = pls_fit_components(&x, &y, 8).unwrap();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let o = ols(&refs, &y).unwrap();
        let fitted = pls.predict(&x).unwrap();
        for i in 0..y.len() {
            let want: f64 = o.beta[0] + (0..8).map(|j| o.beta[j + 1] * cols[j][i]).sum::<f64>();
            assert!((fitted[i] - want).abs() < 1e-6, "seed {seed} row {i}");
        }
    }
}

#[test]
fn pls_matches_textbook_recursion() {
    let (cols, y) = latent_instance(9, 100);
    let names: Vec<String> = (0..10).map(|j| format!("z{j}")).collect();
    let x = matrix(&names, &cols);
    for k in 1..=4 {
        let got = pls_fit_components(&x, &y, k).unwrap().predict(&x).unwrap();
        let want = pls_fitted(&cols, &y, k);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-6);
        }
    }
}

#[test]
fn pls_rmsep_matches_scripted_folds() {
    let (cols, y) = latent_instance(4, 100);
    let names: Vec<String> = (0..10).map(|j| format!("z{j}")).collect();
    let x = matrix(&names, &cols);
    let fit = pls_fit(&x, &y, 6, 10, 77).unwrap();
    let folds = lurk::evaluation::kfold_assignment(100, 10, 77);
    for k in 1..=6 {
        let mut sse = 0.0;
        for f in 0..10 {
            let train: Vec<usize> = (0..100).filter(|&i| folds[i] != f).collect();
            let tc: Vec<Vec<f64>> = cols.iter().map(|c| train.iter().map(|&i| c[i]).collect()).collect();
            let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let tx = CovariateMatrix::from_columns(
                train.iter().map(|i| format!("s{i}")).collect(),
                names.clone(),
                tc,
            )
            .unwrap();
            let model = pls_fit_components(&tx, &ty, k).unwrap();
            for i in (0..100).filter(|&i| folds[i] == f) {
                let row: Vec<f64> = cols.iter().map(|c| c[i]).collect();
                sse += (y[i] - model.predict_row(&row)).powi(2);
            }
        }
        let want = (sse / 100.0).sqrt();
        assert!((fit.rmsep[k - 1] - want).abs() < 1e-6, "k = {k}");
    }
}

#[test]
fn two_latent_factors_need_few_components() {
    let names: Vec<String> = (0..10).map(|j| format!("z{j}")).collect();
    let mut ok = 0;
    for seed in 0..20 {
        let (cols, y) = latent_instance(seed, 100);
        let fit = pls_fit(&matrix(&names, &cols), &y, 10, 10, seed).unwrap();
        ok += usize::from(fit.model.n_components <= 4);
    }
    assert!(ok >= 18, "{ok}/20");
}

#[test]
fn morans_i_matches_double_sum() {
    let coords: Vec<(f64, f64)> = (0..25).map(|k| ((k % 5) as f64 * 2000.0, (k / 5) as f64 * 2000.0)).collect();
    let r: Vec<f64> = coords.iter().map(|&(x, y)| 0.001 * x + 0.0005 * y).collect();
    let got = morans_i(&r, &coords).unwrap();
    let want = morans_double_sum(&r, &coords, 1000.0);
    assert!(got.i > 0.0);
    assert!((got.i - want).abs() < 1e-12);
    assert!((got.expected_i + 1.0 / 24.0).abs() < 1e-15);

    let mut g = rng(5);
    let coords: Vec<(f64, f64)> = (0..40).map(|_| (g.random::<f64>() * 5000.0, g.random::<f64>() * 5000.0)).collect();
    let r: Vec<f64> = (0..40).map(|_| normal(&mut g)).collect();
    let got = morans_i(&r, &coords).unwrap();
    assert!((got.i - morans_double_sum(&r, &coords, 1000.0)).abs() < 1e-12);
}
