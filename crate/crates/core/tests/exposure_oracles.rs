mod common;

use std::collections::BTreeMap;

use common::*;
use lurk::covariates::CovariateMatrix;
use lurk::evaluation::FittedModel;
use lurk::exposure::{cumulative_exposure, population_weighted_mean, predict_grid, window_variance};
use lurk::geodata::{Lattice, RasterGrid, DEFAULT_NODATA};
use lurk::kriging::{uk_fit_with_variogram, VariogramModel};
use lurk::lur::LinearModel;
use proptest::prelude::*;
use rand::Rng;

const ND: f64 = DEFAULT_NODATA;

fn cell() -> impl Strategy<Value = f64> {
    prop_oneof![1 => Just(ND), 6 => 0.0..100.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, ..ProptestConfig::default() })]

    #[test]
    fn exposure_curve_matches_cell_loop(
        conc in prop::collection::vec(cell(), 48),
        pop in prop::collection::vec(prop_oneof![1 => Just(ND), 6 => 0.0..500.0f64], 48),
        thresholds in prop::collection::vec(0.0..100.0f64, 1..8),
    ) {
        let lat = Lattice::new(0.0, 0.0, 1000.0, 8, 6).unwrap();
        let s = RasterGrid::new(lat, conc.clone(), ND).unwrap();
        let p = RasterGrid::new(lat, pop.clone(), ND).unwrap();
        let (c, w): (Vec<f64>, Vec<f64>) = conc
            .iter()
            .zip(&pop)
            .filter(|(c, p)| **c != ND && **p != ND)
            .map(|(c, p)| (*c, *p))
            .unzip();
        let total: f64 = w.iter().sum();
        match cumulative_exposure(&s, &p, &thresholds) {
            Ok(curve) => {
                prop_assert!(total > 0.0);
                let mut ts = thresholds.clone();
                ts.sort_by(f64::total_cmp);
                prop_assert_eq!(&curve.thresholds, &ts);
                let want = exposure_fractions(&c, &w, &ts);
                for (g, e) in curve.fraction_above.iter().zip(&want) {
                    prop_assert!((g - e).abs() < 1e-12);
                }
                for f in curve.fraction_above.windows(2) {
                    prop_assert!(f[1] <= f[0]);
                }
                let mean = c.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / total;
                prop_assert!((curve.pop_weighted_mean - mean).abs() < 1e-9 * mean.max(1.0));
                prop_assert!((population_weighted_mean(&s, &p).unwrap() - mean).abs() < 1e-9 * mean.max(1.0));
            }
            Err(_) => prop_assert!(!(total > 0.0)),
        }
    }

    #[test]
    fn window_variance_matches_sliding_loop(
        values in prop::collection::vec(0.0..50.0f64, 7 * 5),
        half in 0usize..4,
    ) {
        let lat = Lattice::new(0.0, 0.0, 100.0, 7, 5).unwrap();
        let g = RasterGrid::new(lat, values.clone(), ND).unwrap();
        let w = 2 * half + 1;
        let got = window_variance(&g, w).unwrap();
        let want = sliding_variance(&values, 7, 5, w);
        for (a, b) in got.values.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn window_variance_skips_nodata() {
    let lat = Lattice::new(0.0, 0.0, 100.0, 3, 3).unwrap();
    let g = RasterGrid::new(lat, vec![1.0, ND, 3.0, ND, 5.0, ND, 7.0, ND, 9.0], ND).unwrap();
    let v = window_variance(&g, 3).unwrap();
    // centre sees 1, 3, 5, 7, 9
    assert!((v.values[4] - 8.0).abs() < 1e-12);
    // corner (0, 0) sees 1 and 5
    assert!((v.values[0] - 4.0).abs() < 1e-12);
    assert_eq!(v.values[1], ND);
    assert!(window_variance(&g, 2).is_err());
}

fn grids(lat: Lattice, seed: u64) -> BTreeMap<String, RasterGrid> {
    let mut r = rng(seed);
    let mut out = BTreeMap::new();
    for name in ["a", "b"] {
        let mut vals: Vec<f64> = (0..lat.len()).map(|_| normal(&mut r)).collect();
        vals[3] = ND;
        out.insert(name.to_string(), RasterGrid::new(lat, vals, ND).unwrap());
    }
    out
}

#[test]
fn predicted_grid_matches_cellwise_models() {
    let mut r = rng(8);
    let n = 40;
    let coords: Vec<(f64, f64)> = (0..n).map(|_| (r.random_range(0.0..10_000.0), r.random_range(0.0..8_000.0))).collect();
    let cols: Vec<Vec<f64>> = (0..2).map(|_| (0..n).map(|_| normal(&mut r)).collect()).collect();
    let y: Vec<f64> = (0..n).map(|i| 1.0 + 4.0 * cols[0][i] - 3.0 * cols[1][i] + normal(&mut r)).collect();
    let ids = (0..n).map(|i| format!("s{i}")).collect();
    let x = CovariateMatrix::from_columns(ids, vec!["a".into(), "b".into()], cols).unwrap();
    let lm = LinearModel::fit_columns(&x, &y, x.names()).unwrap();
    let uk = uk_fit_with_variogram(&lm, &coords, &x, &y, VariogramModel::new(0.2, 1.0, 2500.0).unwrap()).unwrap();
    let lat = Lattice::new(0.0, 0.0, 500.0, 20, 16).unwrap();
    let g = grids(lat, 9);
    for model in [FittedModel::from(lm.clone()), FittedModel::from(uk.clone())] {
        let surface = predict_grid(&model, &lat, &g, true, "m").unwrap();
        assert_eq!(surface.n_nodata, 1);
        let mut floored = 0;
        for i in 0..lat.len() {
            let got = surface.grid.values[i];
            if i == 3 {
                assert_eq!(got, ND);
                continue;
            }
            let (cx, cy) = (250.0 + 500.0 * (i % 20) as f64, 250.0 + 500.0 * (i / 20) as f64);
            let row = [g["a"].values[i], g["b"].values[i]];
            let (mean, var) = match &model {
                FittedModel::Kriging { .. } => {
                    let p = uk.predict(cx, cy, &row).unwrap();
                    (p.mean, Some(p.variance))
                }
                _ => (lm.intercept + lm.coefficients[0] * row[0] + lm.coefficients[1] * row[1], None),
            };
            floored += usize::from(mean < 0.0);
            assert!((got - mean.max(0.0)).abs() < 1e-9);
            match (&surface.variance, var) {
                (Some(v), Some(want)) => assert!((v.values[i] - want).abs() < 1e-9),
                (None, None) => {}
                _ => panic!("variance presence differs"),
            }
        }
        assert_eq!(surface.n_floored, floored);
        assert!(floored > 0);
    }
    let mut off = g.clone();
    let shifted = Lattice::new(10.0, 0.0, 500.0, 20, 16).unwrap();
    off.insert("b".into(), RasterGrid::filled(shifted, 1.0));
    assert!(predict_grid(&FittedModel::from(lm), &lat, &off, false, "m").is_err());
}
