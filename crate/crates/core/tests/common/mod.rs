//! Independent reference implementations used as test oracles. Nothing here
//! calls into the solvers under test.
#![allow(dead_code)]

pub use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Gaussian elimination with partial pivoting on a dense copy.
pub fn solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &r)| {
            let mut v = row.clone();
            v.push(r);
            v
        })
        .collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        if m[piv][c].abs() < 1e-300 {
            return None;
        }
        m.swap(c, piv);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            if f != 0.0 {
                for k in c..=n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r][k] * x[k]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    Some(x)
}

pub fn inverse(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let e: Vec<f64> = (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
        cols.push(solve(a, &e)?);
    }
    Some((0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect())
}

pub struct OlsOracle {
    /// Intercept first.
    pub beta: Vec<f64>,
    pub rss: f64,
    pub r2: f64,
    pub adj_r2: f64,
    /// Two-sided p-values, intercept first.
    pub p_values: Vec<f64>,
}

/// OLS with intercept through the normal equations `(XᵀX)β = Xᵀy`.
pub fn ols(cols: &[&[f64]], y: &[f64]) -> Option<OlsOracle> {
    let n = y.len();
    let p = cols.len() + 1;
    let x = |i: usize, j: usize| if j == 0 { 1.0 } else { cols[j - 1][i] };
    let xtx: Vec<Vec<f64>> = (0..p)
        .map(|a| (0..p).map(|b| (0..n).map(|i| x(i, a) * x(i, b)).sum()).collect())
        .collect();
    let xty: Vec<f64> = (0..p).map(|a| (0..n).map(|i| x(i, a) * y[i]).sum()).collect();
    let inv = inverse(&xtx)?;
    let beta: Vec<f64> = (0..p).map(|a| (0..p).map(|b| inv[a][b] * xty[b]).sum()).collect();
    let rss: f64 = (0..n)
        .map(|i| {
            let f: f64 = (0..p).map(|j| beta[j] * x(i, j)).sum();
            (y[i] - f).powi(2)
        })
        .sum();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let r2 = 1.0 - rss / tss;
    let k = cols.len();
    let adj_r2 = 1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - k as f64 - 1.0);
    let df = (n - p) as f64;
    let sigma2 = rss / df;
    let t = StudentsT::new(0.0, 1.0, df).ok()?;
    let p_values = (0..p)
        .map(|j| {
            let se = (sigma2 * inv[j][j]).sqrt();
            let tv = (beta[j] / se).abs();
            2.0 * (1.0 - t.cdf(tv))
        })
        .collect();
    Some(OlsOracle {
        beta,
        rss,
        r2,
        adj_r2,
        p_values,
    })
}

/// VIF of `cand` given `included`: `1 / (1 − R²)` of the auxiliary regression.
pub fn vif(cand: &[f64], included: &[&[f64]]) -> f64 {
    if included.is_empty() {
        return 1.0;
    }
    match ols(included, cand) {
        Some(f) if f.r2 < 1.0 => 1.0 / (1.0 - f.r2),
        _ => f64::INFINITY,
    }
}

pub struct StepOracle {
    pub names: Vec<String>,
    /// Intercept first, in selection order.
    pub beta: Vec<f64>,
}

/// Forward selection that refits every tentative model from scratch at every
/// step: admissible = VIF < `vif_max`, p < `p_max`, earlier coefficient signs
/// unchanged; best adjusted R² wins (lowest index on ties); stop when the
/// gain falls below `min_gain` (not checked for the first variable).
pub fn stepwise_oracle(names: &[String], cols: &[Vec<f64>], y: &[f64], vif_max: f64, p_max: f64, min_gain: f64) -> Option<StepOracle> {
    let n = y.len();
    let mut selected: Vec<usize> = Vec::new();
    let mut signs: Vec<f64> = Vec::new();
    let mut current = 0.0;
    loop {
        if n <= selected.len() + 2 {
            break;
        }
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..cols.len() {
            if selected.contains(&j) {
                continue;
            }
            let m = cols[j].iter().sum::<f64>() / n as f64;
            if cols[j].iter().all(|v| (v - m).abs() == 0.0) {
                continue;
            }
            let inc: Vec<&[f64]> = selected.iter().map(|&s| cols[s].as_slice()).collect();
            if !(vif(&cols[j], &inc) < vif_max) {
                continue;
            }
            let mut all = inc.clone();
            all.push(&cols[j]);
            let Some(fit) = ols(&all, y) else { continue };
            let k = selected.len();
            if !(fit.p_values[k + 1] < p_max) {
                continue;
            }
            if signs.iter().enumerate().any(|(a, s)| fit.beta[a + 1].signum() != *s) {
                continue;
            }
            if best.map_or(true, |(_, adj, _)| fit.adj_r2 > adj) {
                best = Some((j, fit.adj_r2, fit.beta[k + 1]));
            }
        }
        let Some((j, adj, coef)) = best else { break };
        if !selected.is_empty() && adj - current < min_gain {
            break;
        }
        selected.push(j);
        signs.push(coef.signum());
        current = adj;
    }
    if selected.is_empty() {
        return None;
    }
    let cs: Vec<&[f64]> = selected.iter().map(|&s| cols[s].as_slice()).collect();
    let fit = ols(&cs, y)?;
    Some(StepOracle {
        names: selected.iter().map(|&s| names[s].clone()).collect(),
        beta: fit.beta,
    })
}

pub fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Universal kriging from the full bordered system
/// `[C F; Fᵀ 0] [λ; μ] = [c₀; f₀]`, solved densely.
/// Returns `(λᵀy, C(0) − λᵀc₀ − μᵀf₀)`.
pub fn uk_bordered(
    coords: &[(f64, f64)],
    x_rows: &[Vec<f64>],
    y: &[f64],
    (nugget, psill, range): (f64, f64, f64),
    at: (f64, f64),
    row: &[f64],
) -> Option<(f64, f64)> {
    let n = coords.len();
    let p = row.len() + 1;
    let cov = |h: f64| psill * (-h / range).exp();
    let sill = nugget + psill;
    let size = n + p;
    let mut a = vec![vec![0.0; size]; size];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = if i == j { sill } else { cov(dist(coords[i], coords[j])) };
        }
        a[i][n] = 1.0;
        a[n][i] = 1.0;
        for k in 1..p {
            a[i][n + k] = x_rows[i][k - 1];
            a[n + k][i] = x_rows[i][k - 1];
        }
    }
    let mut b: Vec<f64> = coords.iter().map(|&c| cov(dist(c, at))).collect();
    b.push(1.0);
    b.extend_from_slice(row);
    let sol = solve(&a, &b)?;
    let mean: f64 = (0..n).map(|i| sol[i] * y[i]).sum();
    let var = sill - (0..size).map(|i| sol[i] * b[i]).sum::<f64>();
    Some((mean, var))
}

/// Semivariance bins by scanning all pairs: `(mean lag, γ̂, pairs)` for every
/// non-empty bin of width `max_lag / n_bins`, the last bin closed.
pub fn variogram_bins(z: &[f64], coords: &[(f64, f64)], n_bins: usize, max_lag: f64) -> Vec<(f64, f64, usize)> {
    let w = max_lag / n_bins as f64;
    let mut out = Vec::new();
    for b in 0..n_bins {
        let (lo, hi) = (b as f64 * w, (b + 1) as f64 * w);
        let mut pairs = Vec::new();
        for i in 0..z.len() {
            for j in 0..z.len() {
                if i < j {
                    let d = dist(coords[i], coords[j]);
                    let inside = if b + 1 == n_bins { d >= lo && d <= max_lag } else { d >= lo && d < hi };
                    if inside {
                        pairs.push((d, 0.5 * (z[i] - z[j]).powi(2)));
                    }
                }
            }
        }
        if !pairs.is_empty() {
            let k = pairs.len() as f64;
            out.push((
                pairs.iter().map(|p| p.0).sum::<f64>() / k,
                pairs.iter().map(|p| p.1).sum::<f64>() / k,
                pairs.len(),
            ));
        }
    }
    out
}

/// Moran's I by direct double sum with inverse-distance weights floored at
/// `cap` metres and row standardization.
pub fn morans_double_sum(r: &[f64], coords: &[(f64, f64)], cap: f64) -> f64 {
    let n = r.len();
    let mean = r.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = r.iter().map(|v| v - mean).collect();
    let mut w = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                w[i][j] = 1.0 / dist(coords[i], coords[j]).max(cap);
            }
        }
        let s: f64 = w[i].iter().sum();
        for v in w[i].iter_mut() {
            *v /= s;
        }
    }
    let s0: f64 = w.iter().flatten().sum();
    let mut num = 0.0;
    for i in 0..n {
        for j in 0..n {
            num += w[i][j] * z[i] * z[j];
        }
    }
    let den: f64 = z.iter().map(|v| v * v).sum();
    n as f64 / s0 * num / den
}

/// PLS1 written directly from the textbook recursion on standardized
/// columns (sample sd). Returns fitted values for `k` components.
pub fn pls_fitted(cols: &[Vec<f64>], y: &[f64], k: usize) -> Vec<f64> {
    let n = y.len();
    let p = cols.len();
    let mut x: Vec<Vec<f64>> = cols
        .iter()
        .map(|c| {
            let m = c.iter().sum::<f64>() / n as f64;
            let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
            c.iter().map(|v| (v - m) / sd).collect()
        })
        .collect();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let mut f: Vec<f64> = y.iter().map(|v| v - ybar).collect();
    let mut fitted = vec![ybar; n];
    for _ in 0..k {
        let mut w: Vec<f64> = (0..p).map(|j| (0..n).map(|i| x[j][i] * f[i]).sum()).collect();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        w.iter_mut().for_each(|v| *v /= norm);
        let t: Vec<f64> = (0..n).map(|i| (0..p).map(|j| x[j][i] * w[j]).sum()).collect();
        let tt: f64 = t.iter().map(|v| v * v).sum();
        let q = (0..n).map(|i| f[i] * t[i]).sum::<f64>() / tt;
        for j in 0..p {
            let pj = (0..n).map(|i| x[j][i] * t[i]).sum::<f64>() / tt;
            for i in 0..n {
                x[j][i] -= t[i] * pj;
            }
        }
        for i in 0..n {
            fitted[i] += q * t[i];
            f[i] -= q * t[i];
        }
    }
    fitted
}

/// Population share strictly above each threshold, by looping over cells
/// once per threshold.
pub fn exposure_fractions(conc: &[f64], pop: &[f64], thresholds: &[f64]) -> Vec<f64> {
    let total: f64 = pop.iter().sum();
    thresholds
        .iter()
        .map(|&t| {
            let mut above = 0.0;
            for (c, p) in conc.iter().zip(pop) {
                if *c > t {
                    above += p;
                }
            }
            above / total
        })
        .collect()
}

/// Population variance inside the centered `w × w` window of every cell of
/// a row-major `ncols × nrows` grid, truncated at the edges.
pub fn sliding_variance(values: &[f64], ncols: usize, nrows: usize, w: usize) -> Vec<f64> {
    let h = (w / 2) as i64;
    let mut out = vec![0.0; values.len()];
    for r in 0..nrows as i64 {
        for c in 0..ncols as i64 {
            let mut vals = Vec::new();
            for dr in -h..=h {
                for dc in -h..=h {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr >= 0 && cc >= 0 && rr < nrows as i64 && cc < ncols as i64 {
                        vals.push(values[(rr as usize) * ncols + cc as usize]);
                    }
                }
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            out[(r as usize) * ncols + c as usize] = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
        }
    }
    out
}

/// Seeded stepwise instance: `n` rows, 8 candidates with two correlated
/// pairs and a response built from 3 of them.
pub fn stepwise_instance(seed: u64, n: usize) -> (Vec<String>, Vec<Vec<f64>>, Vec<f64>) {
    let mut r = rng(seed);
    let mut cols: Vec<Vec<f64>> = (0..6)
        .map(|j| {
            let scale = 1.0 + j as f64;
            (0..n).map(|_| scale * normal(&mut r)).collect()
        })
        .collect();
    let c6: Vec<f64> = (0..n).map(|i| cols[0][i] + 0.4 * normal(&mut r)).collect();
    let c7: Vec<f64> = (0..n).map(|i| 0.5 * cols[1][i] - 0.3 * cols[2][i] + 0.8 * normal(&mut r)).collect();
    cols.push(c6);
    cols.push(c7);
    let mut picks: Vec<usize> = (0..8).collect();
    picks.sort_by_key(|_| r.random::<u32>());
    let mut y = vec![10.0; n];
    for &j in &picks[..3] {
        let b = (0.5 + r.random::<f64>()) * if r.random::<bool>() { 1.0 } else { -1.0 } / (1.0 + j as f64);
        for i in 0..n {
            y[i] += b * cols[j][i];
        }
    }
    for v in y.iter_mut() {
        *v += 0.7 * normal(&mut r);
    }
    let names = (0..8).map(|j| format!("x{j}")).collect();
    (names, cols, y)
}

/// `n` rows of 10 columns driven by 2 latent factors; the response depends
/// on the factors only.
pub fn latent_instance(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut r = rng(seed);
    let t: Vec<[f64; 2]> = (0..n).map(|_| [normal(&mut r), normal(&mut r)]).collect();
    let load: Vec<[f64; 2]> = (0..10).map(|_| [normal(&mut r), normal(&mut r)]).collect();
    let cols = (0..10)
        .map(|j| (0..n).map(|i| t[i][0] * load[j][0] + t[i][1] * load[j][1] + 0.3 * normal(&mut r)).collect())
        .collect();
    let y = (0..n).map(|i| 3.0 * t[i][0] - 2.0 * t[i][1] + 0.5 * normal(&mut r)).collect();
    (cols, y)
}
