use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponential variogram `γ(h) = c0 + c1 (1 - exp(-h / a))` for `h > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel {
    pub nugget: f64,
    pub partial_sill: f64,
    pub range: f64,
}

impl VariogramModel {
    pub fn new(nugget: f64, partial_sill: f64, range: f64) -> Result<Self> {
        if !(nugget >= 0.0 && partial_sill >= 0.0 && range > 0.0) {
            return Err(Error::invalid(format!(
                "variogram needs c0 >= 0, c1 >= 0, a > 0 (got {nugget}, {partial_sill}, {range})"
            )));
        }
        Ok(Self {
            nugget,
            partial_sill,
            range,
        })
    }

    pub fn sill(&self) -> f64 {
        self.nugget + self.partial_sill
    }

    pub fn gamma(&self, h: f64) -> f64 {
        if h <= 0.0 {
            0.0
        } else {
            self.nugget + self.partial_sill * (1.0 - (-h / self.range).exp())
        }
    }

    /// Spatially structured covariance `c1 exp(-h / a)`, without the nugget.
    pub fn covariance(&self, h: f64) -> f64 {
        self.partial_sill * (-h / self.range).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramBin {
    pub lag_center: f64,
    pub mean_semivariance: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalVariogram {
    pub bins: Vec<VariogramBin>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariogramConfig {
    pub n_bins: usize,
    /// Defaults to half the largest pairwise distance.
    pub max_lag: Option<f64>,
}

impl Default for VariogramConfig {
    fn default() -> Self {
        Self {
            n_bins: 15,
            max_lag: None,
        }
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

pub fn max_pairwise_distance(coords: &[(f64, f64)]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            best = best.max(dist(coords[i], coords[j]));
        }
    }
    best
}

/// Binned semivariance of `residuals`; each retained bin reports the mean
/// separation of its pairs as the lag.
pub fn empirical_variogram(residuals: &[f64], coords: &[(f64, f64)], n_bins: usize, max_lag: f64) -> Result<EmpiricalVariogram> {
    let n = residuals.len();
    if coords.len() != n {
        return Err(Error::invalid("residuals and coordinates differ in length"));
    }
    if n < 2 {
        return Err(Error::invalid("a variogram needs at least 2 sites"));
    }
    if n_bins == 0 {
        return Err(Error::invalid("n_bins must be at least 1"));
    }
    if !(max_lag > 0.0) {
        return Err(Error::invalid("max_lag must be positive"));
    }
    let width = max_lag / n_bins as f64;
    let mut sum_sq = vec![0.0; n_bins];
    let mut sum_d = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(coords[i], coords[j]);
            if d > max_lag {
                continue;
            }
            let b = ((d / width) as usize).min(n_bins - 1);
            sum_sq[b] += (residuals[i] - residuals[j]).powi(2);
            sum_d[b] += d;
            count[b] += 1;
        }
    }
    let bins: Vec<VariogramBin> = (0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| VariogramBin {
            lag_center: sum_d[b] / count[b] as f64,
            mean_semivariance: 0.5 * sum_sq[b] / count[b] as f64,
            n_pairs: count[b],
        })
        .collect();
    if bins.is_empty() {
        return Err(Error::EmptyVariogram);
    }
    Ok(EmpiricalVariogram { bins })
}

struct Profile {
    sse: f64,
    c0: f64,
    c1: f64,
}

// Weighted non-negative least squares for (c0, c1) with the range fixed.
fn profile(ev: &EmpiricalVariogram, a: f64) -> Profile {
    let (mut sw, mut sg, mut sgg, mut sy, mut sgy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for b in &ev.bins {
        let w = b.n_pairs as f64;
        let g = 1.0 - (-b.lag_center / a).exp();
        sw += w;
        sg += w * g;
        sgg += w * g * g;
        sy += w * b.mean_semivariance;
        sgy += w * g * b.mean_semivariance;
    }
    let sse = |c0: f64, c1: f64| -> f64 {
        ev.bins
            .iter()
            .map(|b| {
                let g = 1.0 - (-b.lag_center / a).exp();
                b.n_pairs as f64 * (c0 + c1 * g - b.mean_semivariance).powi(2)
            })
            .sum()
    };
    let mut options = Vec::with_capacity(3);
    let det = sw * sgg - sg * sg;
    if det > 1e-14 * sw * sgg {
        let c1 = (sw * sgy - sg * sy) / det;
        let c0 = (sy - c1 * sg) / sw;
        if c0 >= 0.0 && c1 >= 0.0 {
            options.push((c0, c1));
        }
    }
    if options.is_empty() {
        options.push((0.0, if sgg > 0.0 { (sgy / sgg).max(0.0) } else { 0.0 }));
        options.push(((sy / sw).max(0.0), 0.0));
    }
    options
        .into_iter()
        .map(|(c0, c1)| Profile { sse: sse(c0, c1), c0, c1 })
        .fold(None::<Profile>, |best, p| match best {
            Some(b) if b.sse <= p.sse => Some(b),
            _ => Some(p),
        })
        .expect("at least one option")
}

const GRID_POINTS: usize = 64;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Fits the exponential model by pair-weighted least squares. The sills
/// are solved in closed form for each range; the range is searched on a
/// log grid and refined by golden-section search around every local
/// minimum.
pub fn fit_exponential(ev: &EmpiricalVariogram) -> Result<VariogramModel> {
    if ev.bins.len() < 3 {
        return Err(Error::VariogramFit(format!(
            "need at least 3 non-empty bins, got {}",
            ev.bins.len()
        )));
    }
    let min_lag = ev.bins.iter().map(|b| b.lag_center).fold(f64::INFINITY, f64::min);
    let max_lag = ev.bins.iter().map(|b| b.lag_center).fold(0.0, f64::max);
    if !(max_lag > 0.0) {
        return Err(Error::VariogramFit("all lags are zero".into()));
    }
    let lo = (min_lag / 10.0).max(max_lag * 1e-6).ln();
    let hi = (10.0 * max_lag).ln();
    let at = |u: f64| profile(ev, u.exp());

    let grid: Vec<(f64, Profile)> = (0..GRID_POINTS)
        .map(|i| {
            let u = lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64;
            (u, at(u))
        })
        .collect();
    let mut best: Option<(f64, Profile)> = None;
    let mut consider = |u: f64, p: Profile| {
        if !p.sse.is_finite() {
            return;
        }
        if best.as_ref().map_or(true, |(_, b)| p.sse < b.sse) {
            best = Some((u, p));
        }
    };
    for i in 0..GRID_POINTS {
        let s = grid[i].1.sse;
        let left = if i > 0 { grid[i - 1].1.sse } else { f64::INFINITY };
        let right = if i + 1 < GRID_POINTS { grid[i + 1].1.sse } else { f64::INFINITY };
        if !(s <= left && s <= right) {
            continue;
        }
        let mut a = grid[i.saturating_sub(1)].0;
        let mut b = grid[(i + 1).min(GRID_POINTS - 1)].0;
        let mut x1 = b - INV_PHI * (b - a);
        let mut x2 = a + INV_PHI * (b - a);
        let mut f1 = at(x1).sse;
        let mut f2 = at(x2).sse;
        while b - a > 1e-10 {
            if f1 <= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - INV_PHI * (b - a);
                f1 = at(x1).sse;
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + INV_PHI * (b - a);
                f2 = at(x2).sse;
            }
        }
        let u = 0.5 * (a + b);
        consider(u, at(u));
        consider(grid[i].0, at(grid[i].0));
    }
    let Some((u, p)) = best else {
        return Err(Error::VariogramFit(format!(
            "objective not finite for any range in [{:.3}, {:.3}] m",
            lo.exp(),
            hi.exp()
        )));
    };

    // a flat variogram is a pure nugget; prefer it when it fits as well
    let (mut sw, mut sy) = (0.0, 0.0);
    for b in &ev.bins {
        sw += b.n_pairs as f64;
        sy += b.n_pairs as f64 * b.mean_semivariance;
    }
    let level = sy / sw;
    let nugget_sse: f64 = ev
        .bins
        .iter()
        .map(|b| b.n_pairs as f64 * (level - b.mean_semivariance).powi(2))
        .sum();
    if nugget_sse <= p.sse * (1.0 + 1e-9) {
        return VariogramModel::new(level.max(0.0), 0.0, u.exp());
    }
    VariogramModel::new(p.c0, p.c1, u.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sites() {
        let ev = empirical_variogram(&[0.0, 2.0], &[(0.0, 0.0), (1.0, 0.0)], 15, 2.0).unwrap();
        assert_eq!(ev.bins.len(), 1);
        assert_eq!(ev.bins[0].mean_semivariance, 2.0);
        assert_eq!(ev.bins[0].n_pairs, 1);
    }

    #[test]
    fn constant_residuals() {
        let coords: Vec<(f64, f64)> = (0..12).map(|i| (i as f64 * 10.0, (i % 3) as f64)).collect();
        let ev = empirical_variogram(&[5.0; 12], &coords, 5, 100.0).unwrap();
        assert!(ev.bins.iter().all(|b| b.mean_semivariance == 0.0));
    }

    #[test]
    fn pairs_beyond_max_lag() {
        let r = empirical_variogram(&[0.0, 1.0], &[(0.0, 0.0), (10.0, 0.0)], 3, 5.0);
        assert!(matches!(r, Err(Error::EmptyVariogram)));
    }

    #[test]
    fn recovers_exact_parameters() {
        let truth = VariogramModel::new(0.1, 1.0, 50_000.0).unwrap();
        let bins = (1..=15)
            .map(|i| {
                let h = i as f64 * 10_000.0;
                VariogramBin {
                    lag_center: h,
                    mean_semivariance: truth.gamma(h),
                    n_pairs: 100 + 10 * i,
                }
            })
            .collect();
        let fit = fit_exponential(&EmpiricalVariogram { bins }).unwrap();
        assert!((fit.nugget - 0.1).abs() < 1e-5, "{fit:?}");
        assert!((fit.partial_sill - 1.0).abs() < 1e-4, "{fit:?}");
        assert!((fit.range - 50_000.0).abs() < 5.0, "{fit:?}");
    }

    #[test]
    fn flat_is_pure_nugget() {
        let bins = (1..=10)
            .map(|i| VariogramBin {
                lag_center: i as f64 * 1000.0,
                mean_semivariance: 3.5,
                n_pairs: 20,
            })
            .collect();
        let fit = fit_exponential(&EmpiricalVariogram { bins }).unwrap();
        assert_eq!(fit.partial_sill, 0.0);
        assert!((fit.nugget - 3.5).abs() < 1e-12);
    }

    #[test]
    fn too_few_bins() {
        let bins = vec![
            VariogramBin {
                lag_center: 1.0,
                mean_semivariance: 1.0,
                n_pairs: 1,
            };
            2
        ];
        assert!(matches!(fit_exponential(&EmpiricalVariogram { bins }), Err(Error::VariogramFit(_))));
    }

    #[test]
    fn gamma_shape() {
        let v = VariogramModel::new(0.5, 2.0, 10.0).unwrap();
        assert_eq!(v.gamma(0.0), 0.0);
        assert!((v.gamma(1e9) - 2.5).abs() < 1e-12);
        assert!(v.gamma(5.0) < v.gamma(6.0));
        assert!(VariogramModel::new(-1.0, 1.0, 1.0).is_err());
    }
}
