//! Quality criteria over pooled out-of-fold predictions: Poisson deviance,
//! inverse-training-size weighted deviance, and predictive power.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::poisson::poisson_deviance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictionRow {
    pub row: usize,
    pub fold: usize,
    pub observed: u64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledPredictions {
    pub rows: Vec<PredictionRow>,
    /// Training-set size per fold.
    pub fold_sizes: BTreeMap<usize, usize>,
}

impl PooledPredictions {
    pub fn new(rows: Vec<PredictionRow>, fold_sizes: BTreeMap<usize, usize>) -> Result<Self> {
        let pp = PooledPredictions { rows, fold_sizes };
        pp.validate()?;
        Ok(pp)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for r in &self.rows {
            if !seen.insert(r.row) {
                return Err(Error::InvalidArgument(format!("row {} predicted twice", r.row)));
            }
            if !(r.predicted > 0.0 && r.predicted.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "row {}: prediction {} is not a positive number",
                    r.row, r.predicted
                )));
            }
        }
        if self.fold_sizes.values().any(|&w| w == 0) {
            return Err(Error::InvalidArgument("fold with empty training set".into()));
        }
        Ok(())
    }

    /// Rows sorted by row id.
    pub fn sorted(&self) -> Vec<PredictionRow> {
        let mut rows = self.rows.clone();
        rows.sort_by_key(|r| r.row);
        rows
    }

    // summed in row-id order so results do not depend on input order
    fn split(&self) -> (Vec<f64>, Vec<f64>) {
        self.sorted()
            .iter()
            .map(|r| (r.observed as f64, r.predicted))
            .unzip()
    }

    /// Deviance of the rows belonging to each fold.
    pub fn fold_deviances(&self) -> BTreeMap<usize, f64> {
        let mut by_fold: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for r in &self.sorted() {
            let e = by_fold.entry(r.fold).or_default();
            e.0.push(r.observed as f64);
            e.1.push(r.predicted);
        }
        by_fold
            .into_iter()
            .map(|(f, (y, mu))| (f, poisson_deviance(&y, &mu)))
            .collect()
    }
}

pub fn pooled_deviance(pp: &PooledPredictions) -> Result<f64> {
    pp.validate()?;
    let (y, mu) = pp.split();
    Ok(poisson_deviance(&y, &mu))
}

/// `sum_b D_b / w_b / sum_b 1 / w_b` over folds b, with `w_b` the training
/// size of fold b. Weights are rescaled to `min_w / w_b`, so equal sizes
/// give exactly the mean of the fold deviances.
pub fn weighted_deviance(pp: &PooledPredictions) -> Result<f64> {
    pp.validate()?;
    let per_fold = pp.fold_deviances();
    let sizes = per_fold
        .keys()
        .map(|fold| {
            pp.fold_sizes
                .get(fold)
                .map(|&w| w as f64)
                .ok_or_else(|| Error::InvalidArgument(format!("missing size for fold {fold}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let min_w = sizes.iter().copied().fold(f64::INFINITY, f64::min);
    if sizes.is_empty() {
        return Err(Error::InvalidArgument("no folds".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (dev, w) in per_fold.values().zip(&sizes) {
        let v = min_w / w;
        num += dev * v;
        den += v;
    }
    Ok(num / den)
}

/// Percentage of rows with `-0.5 <= y - mu <= 0.5`.
pub fn predictive_power(pp: &PooledPredictions) -> f64 {
    if pp.rows.is_empty() {
        return 0.0;
    }
    let hits = pp
        .rows
        .iter()
        .filter(|r| {
            let d = r.observed as f64 - r.predicted;
            (-0.5..=0.5).contains(&d)
        })
        .count();
    100.0 * hits as f64 / pp.rows.len() as f64
}

/// `(R, r)` with `r = score / null_score` and `R = 1 - r`.
pub fn score_ratio(score: f64, null_score: f64) -> Result<(f64, f64)> {
    if !(null_score > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "null score must be positive, got {null_score}"
        )));
    }
    let r = score / null_score;
    Ok((1.0 - r, r))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub method: String,
    pub deviance: f64,
    pub weighted_deviance: f64,
    pub predictive_power: f64,
}

impl MetricRow {
    pub fn compute(method: impl Into<String>, pp: &PooledPredictions) -> Result<Self> {
        Ok(MetricRow {
            method: method.into(),
            deviance: pooled_deviance(pp)?,
            weighted_deviance: weighted_deviance(pp)?,
            predictive_power: predictive_power(pp),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pp(rows: &[(usize, u64, f64)], sizes: &[(usize, usize)]) -> PooledPredictions {
        PooledPredictions::new(
            rows.iter()
                .enumerate()
                .map(|(i, &(fold, observed, predicted))| PredictionRow {
                    row: i,
                    fold,
                    observed,
                    predicted,
                })
                .collect(),
            sizes.iter().copied().collect(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let p = pp(&[(0, 1, 1.0), (0, 4, 4.0), (1, 7, 7.0)], &[(0, 5), (1, 9)]);
        assert_eq!(pooled_deviance(&p).unwrap(), 0.0);
        assert_eq!(weighted_deviance(&p).unwrap(), 0.0);
        assert_eq!(predictive_power(&p), 100.0);
    }

    #[test]
    fn single_row_deviance() {
        let p = pp(&[(0, 0, 1.0)], &[(0, 3)]);
        assert_eq!(pooled_deviance(&p).unwrap(), 2.0);
    }

    #[test]
    fn deviance_ignores_row_order() {
        let a = pp(&[(0, 0, 1.3), (1, 5, 2.0), (0, 2, 2.2)], &[(0, 4), (1, 4)]);
        let b = pp(&[(0, 2, 2.2), (0, 0, 1.3), (1, 5, 2.0)], &[(0, 4), (1, 4)]);
        let (da, db) = (pooled_deviance(&a).unwrap(), pooled_deviance(&b).unwrap());
        assert!((da - db).abs() <= 1e-12 * da);
    }

    #[test]
    fn weighted_deviance_two_folds() {
        // fold deviances 1 and 3, both folds trained on 9 rows
        let y0 = 0u64;
        let p = pp(&[(0, y0, 0.5), (1, y0, 1.5)], &[(0, 9), (1, 9)]);
        let w = weighted_deviance(&p).unwrap();
        assert!((w - 2.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_deviance_unequal_sizes() {
        let p = pp(&[(0, 0, 0.5), (1, 0, 1.5)], &[(0, 1), (1, 3)]);
        // (1/1 + 3/3) / (1 + 1/3)
        let expect = 2.0 / (4.0 / 3.0);
        assert!((weighted_deviance(&p).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn missing_fold_size_is_an_error() {
        let p = pp(&[(0, 1, 1.0), (2, 1, 1.0)], &[(0, 3)]);
        assert!(weighted_deviance(&p).is_err());
    }

    #[test]
    fn nonpositive_prediction_rejected() {
        let rows = vec![PredictionRow {
            row: 0,
            fold: 0,
            observed: 1,
            predicted: 0.0,
        }];
        assert!(PooledPredictions::new(rows, [(0, 1)].into()).is_err());
    }

    #[test]
    fn predictive_power_boundaries() {
        assert_eq!(predictive_power(&pp(&[(0, 3, 3.5)], &[(0, 1)])), 100.0);
        assert_eq!(predictive_power(&pp(&[(0, 3, 2.5)], &[(0, 1)])), 100.0);
        let p = pp(&[(0, 0, 0.4), (0, 0, 0.6), (0, 10, 10.2)], &[(0, 1)]);
        assert!((predictive_power(&p) - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn score_ratio_values() {
        assert_eq!(score_ratio(200.0, 200.0).unwrap(), (0.0, 1.0));
        assert_eq!(score_ratio(0.0, 200.0).unwrap(), (1.0, 0.0));
        assert_eq!(score_ratio(50.0, 200.0).unwrap(), (0.75, 0.25));
        assert!(score_ratio(1.0, 0.0).is_err());
    }
}
