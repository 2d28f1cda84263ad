//! Goodness-of-fit scores and the train/test split.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{StateProbabilityCurve, N_STATES};
use crate::error::{Error, Result};
use crate::format::sig6;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;

pub fn aic(log_likelihood: f64, n_params: usize) -> f64 {
    2.0 * n_params as f64 - 2.0 * log_likelihood
}

/// `n_obs` is the number of observations that contribute likelihood terms.
pub fn bic(log_likelihood: f64, n_params: usize, n_obs: usize) -> f64 {
    (n_obs as f64).ln() * n_params as f64 - 2.0 * log_likelihood
}

/// Sorted distinct whole-year ages at which curves are compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationGrid {
    ages: Vec<f64>,
}

impl EvaluationGrid {
    pub fn new(mut ages: Vec<f64>) -> Result<Self> {
        if ages.iter().any(|a| !(a.is_finite() && *a >= 0.0 && a.fract() == 0.0)) {
            return Err(Error::Domain("evaluation ages must be non-negative whole years".into()));
        }
        ages.sort_by(f64::total_cmp);
        ages.dedup();
        if ages.is_empty() {
            return Err(Error::Domain("evaluation grid is empty".into()));
        }
        Ok(EvaluationGrid { ages })
    }

    /// Distinct ages of the given inspections, rounded to whole years.
    pub fn from_ages(ages: impl IntoIterator<Item = f64>) -> Result<Self> {
        Self::new(ages.into_iter().map(f64::round).collect())
    }

    pub fn ages(&self) -> &[f64] {
        &self.ages
    }

    /// The grid with age 0 prepended, as the master-equation solver expects.
    pub fn solver_grid(&self) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.ages.len() + 1);
        if self.ages[0] != 0.0 {
            g.push(0.0);
        }
        g.extend_from_slice(&self.ages);
        g
    }
}

/// Root mean square difference over every (age, state) cell of the grid.
pub fn rmse(model: &StateProbabilityCurve, baseline: &StateProbabilityCurve, grid: &EvaluationGrid) -> Result<f64> {
    let row = |c: &StateProbabilityCurve, t: f64, which: &str| {
        c.at(t)
            .copied()
            .ok_or_else(|| Error::Domain(format!("{which} curve is not evaluated at age {t}")))
    };
    let mut sum = 0.0;
    for &t in grid.ages() {
        let (a, b) = (row(model, t, "model")?, row(baseline, t, "baseline")?);
        sum += a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    }
    Ok((sum / (grid.ages().len() * N_STATES) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub rmse: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_obs: usize,
    pub n_params: usize,
}

impl MetricSet {
    pub fn new(log_likelihood: f64, n_params: usize, n_obs: usize, rmse: f64) -> Self {
        MetricSet {
            rmse,
            aic: aic(log_likelihood, n_params),
            bic: bic(log_likelihood, n_params, n_obs),
            n_obs,
            n_params,
        }
    }
}

/// `|a − b|` relative to the larger magnitude.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Partitions pipe ids into train and test sets.
///
/// Ids are sorted and de-duplicated before a seeded shuffle, so the result
/// depends only on the set of ids, the ratio and the seed.
pub fn split(pipe_ids: &[String], ratio: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Domain(format!("train fraction {ratio} must lie in (0, 1)")));
    }
    let mut ids: Vec<String> = pipe_ids.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if ids.len() < 2 {
        return Err(Error::Domain(format!("need at least 2 pipes to split, got {}", ids.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = (ratio * ids.len() as f64).round() as usize;
    let test = ids.split_off(n_train);
    Ok((ids, test))
}

/// Which side of the split a score was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Flat JSON form of one score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub family: String,
    pub split: Split,
    pub rmse: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_obs: usize,
    pub n_params: usize,
}

/// One model's row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub train: MetricSet,
    pub test: Option<MetricSet>,
}

impl MetricsRow {
    pub fn records(&self) -> Vec<MetricsRecord> {
        let record = |split, m: &MetricSet| MetricsRecord {
            family: self.model.clone(),
            split,
            rmse: m.rmse,
            aic: m.aic,
            bic: m.bic,
            n_obs: m.n_obs,
            n_params: m.n_params,
        };
        std::iter::once(record(Split::Train, &self.train))
            .chain(self.test.iter().map(|m| record(Split::Test, m)))
            .collect()
    }
}

pub const METRICS_HEADER: [&str; 10] = [
    "model",
    "n_params",
    "train_rmse",
    "train_aic",
    "train_bic",
    "train_n_obs",
    "test_rmse",
    "test_aic",
    "test_bic",
    "test_n_obs",
];

/// Train and test scores side by side, one row per model.
pub fn write_metrics_table<W: Write>(rows: &[MetricsRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        let mut rec = vec![r.model.clone(), r.train.n_params.to_string()];
        for m in [Some(&r.train), r.test.as_ref()] {
            match m {
                Some(m) => rec.extend([sig6(m.rmse), sig6(m.aic), sig6(m.bic), m.n_obs.to_string()]),
                None => rec.extend(std::iter::repeat(String::new()).take(4)),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve(rows: Vec<[f64; 6]>) -> StateProbabilityCurve {
        StateProbabilityCurve {
            grid: (0..rows.len()).map(|i| i as f64).collect(),
            probs: rows,
        }
    }

    #[test]
    fn information_criteria() {
        assert_eq!(aic(0.0, 0), 0.0);
        assert_eq!(aic(-28691.5, 24), 57431.0);
        assert_eq!(bic(-10.0, 7, 1), 20.0);
        let n = 1881;
        assert!(bic(-100.0, 24, n) > aic(-100.0, 24));
        assert_eq!(aic(-5.0, 3) - aic(-2.0, 3), 6.0);
    }

    #[test]
    fn rmse_examples() {
        let grid = EvaluationGrid::new(vec![0.0]).unwrap();
        let a = curve(vec![[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]]);
        let b = curve(vec![[0.5, 0.5, 0.0, 0.0, 0.0, 0.0]]);
        assert!((rmse(&a, &b, &grid).unwrap() - (0.5f64 / 6.0).sqrt()).abs() < 1e-15);
        assert_eq!(rmse(&a, &a, &grid).unwrap(), 0.0);

        let shifted = curve(vec![[1.1, 0.1, 0.1, 0.1, 0.1, 0.1]]);
        assert!((rmse(&a, &shifted, &grid).unwrap() - 0.1).abs() < 1e-12);

        let far = EvaluationGrid::new(vec![3.0]).unwrap();
        assert!(rmse(&a, &b, &far).is_err());
        assert!(EvaluationGrid::new(vec![]).is_err());
        assert!(EvaluationGrid::new(vec![1.5]).is_err());
    }

    #[test]
    fn grid_from_ages() {
        let g = EvaluationGrid::from_ages([7.4, 3.0, 7.0, 12.6]).unwrap();
        assert_eq!(g.ages(), &[3.0, 7.0, 13.0]);
        assert_eq!(g.solver_grid(), vec![0.0, 3.0, 7.0, 13.0]);
        assert_eq!(EvaluationGrid::new(vec![0.0, 2.0]).unwrap().solver_grid(), vec![0.0, 2.0]);
    }

    #[test]
    fn split_examples() {
        let ids: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
        let (train, test) = split(&ids, 0.7, 11).unwrap();
        assert_eq!((train.len(), test.len()), (7, 3));
        assert_eq!(split(&ids, 0.7, 11).unwrap(), (train, test));
        assert!(split(&ids[..1], 0.7, 1).is_err());
        assert!(split(&ids, 1.0, 1).is_err());
    }

    #[test]
    fn relative_error_is_scaled_by_larger() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(8.0, 10.0), 0.2);
        assert_eq!(relative_error(-10.0, 8.0), 1.8);
    }

    #[test]
    fn table_and_json() {
        let row = MetricsRow {
            model: "gompertz".into(),
            train: MetricSet::new(-100.0, 24, 500, 0.01),
            test: Some(MetricSet::new(-40.0, 24, 200, 0.02)),
        };
        let mut buf = Vec::new();
        write_metrics_table(&[row.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), METRICS_HEADER.join(","));
        assert_eq!(lines.next().unwrap(), "gompertz,24,0.01,248,349.151,500,0.02,128,207.16,200");
        let recs = row.records();
        assert_eq!(recs.len(), 2);
        let json = serde_json::to_string(&recs[1]).unwrap();
        assert!(json.contains("\"split\":\"test\""));
    }

    fn rows(n: usize) -> impl Strategy<Value = Vec<[f64; 6]>> {
        prop::collection::vec(prop::array::uniform6(0.0..1.0f64), n)
    }

    proptest! {
        #[test]
        fn rmse_is_a_metric((a, b, c) in (1usize..8).prop_flat_map(|n| (rows(n), rows(n), rows(n)))) {
            let grid = EvaluationGrid::new((0..a.len()).map(|i| i as f64).collect()).unwrap();
            let (a, b, c) = (curve(a), curve(b), curve(c));
            let ab = rmse(&a, &b, &grid).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, rmse(&b, &a, &grid).unwrap());
            prop_assert!(rmse(&a, &c, &grid).unwrap() <= ab + rmse(&b, &c, &grid).unwrap() + 1e-12);
        }

        #[test]
        fn criteria_decrease_with_likelihood(l in -1e5..0.0f64, d in 1e-3..10.0f64, k in 1usize..30, n in 1usize..5000) {
            prop_assert!(aic(l + d, k) < aic(l, k));
            prop_assert!(bic(l + d, k, n) < bic(l, k, n));
        }

        #[test]
        fn split_partitions_and_ignores_order(n in 2usize..200, seed in any::<u64>(), ratio in 0.05..0.95f64) {
            let ids: Vec<String> = (0..n).map(|i| format!("pipe{i}")).collect();
            let (train, test) = split(&ids, ratio, seed).unwrap();
            let mut reversed = ids.clone();
            reversed.reverse();
            prop_assert_eq!(split(&reversed, ratio, seed).unwrap(), (train.clone(), test.clone()));
            prop_assert_eq!(train.len(), (ratio * n as f64).round() as usize);
            let mut all: Vec<String> = train.iter().chain(&test).cloned().collect();
            all.sort();
            let mut expected = ids.clone();
            expected.sort();
            prop_assert_eq!(all, expected);
        }
    }
}
