use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::DistanceSummary;
use crate::error::{Error, Result};
use crate::monitors::GroupKey;

/// Fold index for each of `n` items: seeded uniform shuffle, then
/// round-robin, so fold sizes differ by at most one.
pub fn kfold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum CvScheme {
    Kfold { k: usize, seed: u64 },
    LeaveOneGroupOut { group_key: GroupKey },
}

impl CvScheme {
    pub fn label(&self) -> String {
        match self {
            CvScheme::Kfold { k, .. } => format!("kfold{k}"),
            CvScheme::LeaveOneGroupOut { group_key: GroupKey::Province } => "logo_province".into(),
            CvScheme::LeaveOneGroupOut { group_key: GroupKey::City } => "logo_city".into(),
        }
    }
}

/// Assignment of every site to exactly one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub scheme: CvScheme,
    pub site_ids: Vec<String>,
    /// Fold index per site, into `fold_labels`.
    pub fold_of: Vec<usize>,
    pub fold_labels: Vec<String>,
}

impl CvPlan {
    pub fn kfold(site_ids: &[String], k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid("k-fold CV needs k >= 2"));
        }
        if site_ids.len() < k {
            return Err(Error::invalid(format!(
                "cannot split {} sites into {k} folds",
                site_ids.len()
            )));
        }
        Ok(Self {
            scheme: CvScheme::Kfold { k, seed },
            site_ids: site_ids.to_vec(),
            fold_of: kfold_assignment(site_ids.len(), k, seed),
            fold_labels: (0..k).map(|f| f.to_string()).collect(),
        })
    }

    /// One fold per distinct group label; labels are ordered lexically.
    pub fn leave_one_group_out(site_ids: &[String], groups: &[String], key: GroupKey) -> Result<Self> {
        if groups.len() != site_ids.len() {
            return Err(Error::invalid("one group label per site is required"));
        }
        let labels: Vec<String> = groups.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        if labels.len() < 2 {
            return Err(Error::invalid(format!(
                "leave-one-group-out needs at least 2 groups, found {}",
                labels.len()
            )));
        }
        let fold_of = groups
            .iter()
            .map(|g| labels.binary_search(g).expect("label present"))
            .collect();
        Ok(Self {
            scheme: CvScheme::LeaveOneGroupOut { group_key: key },
            site_ids: site_ids.to_vec(),
            fold_of,
            fold_labels: labels,
        })
    }

    pub fn n_folds(&self) -> usize {
        self.fold_labels.len()
    }

    /// Site indices of each fold, in fold order.
    pub fn folds(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_folds()];
        for (i, &f) in self.fold_of.iter().enumerate() {
            out[f].push(i);
        }
        out
    }

    pub fn fold_label(&self, site: usize) -> &str {
        &self.fold_labels[self.fold_of[site]]
    }

    /// Distance from every site to the nearest site outside its fold.
    pub fn nn_distances(&self, coords: &[(f64, f64)]) -> Vec<f64> {
        (0..coords.len())
            .map(|i| {
                let (x, y) = coords[i];
                let mut best = f64::INFINITY;
                for (j, &(u, v)) in coords.iter().enumerate() {
                    if self.fold_of[j] != self.fold_of[i] {
                        best = best.min(((u - x).powi(2) + (v - y).powi(2)).sqrt());
                    }
                }
                best
            })
            .collect()
    }
}

pub fn nn_distance_summary(plan: &CvPlan, coords: &[(f64, f64)]) -> DistanceSummary {
    DistanceSummary::of(&plan.nn_distances(coords))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn kfold_balanced() {
        let p = CvPlan::kfold(&ids(23), 10, 4).unwrap();
        let sizes: Vec<usize> = p.folds().iter().map(Vec::len).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 23);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn single_group_rejected() {
        let g = vec!["A".to_string(); 5];
        assert!(CvPlan::leave_one_group_out(&ids(5), &g, GroupKey::Province).is_err());
    }

    #[test]
    fn nn_distance_cases() {
        let g: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let p = CvPlan::leave_one_group_out(&ids(2), &g, GroupKey::City).unwrap();
        assert_eq!(p.nn_distances(&[(0.0, 0.0), (3.0, 4.0)]), vec![5.0, 5.0]);

        let g: Vec<String> = ["a", "a", "a", "b"].iter().map(|s| s.to_string()).collect();
        let p = CvPlan::leave_one_group_out(&ids(4), &g, GroupKey::City).unwrap();
        let d = p.nn_distances(&[(0.0, 0.0), (10.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        assert_eq!(d[3], 1.0);
    }
}
