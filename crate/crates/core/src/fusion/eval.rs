//! Recall@K at tIoU thresholds, their means, and the metrics report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{GroundingDataset, Split};
use crate::error::{Error, Result};
use crate::grounding::Predictions;
use crate::temporal::{tiou, Interval, ScoredMoment};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    #[default]
    All,
    Actionless,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Cut-offs, strictly ascending.
    pub ks: Vec<usize>,
    /// tIoU thresholds in `(0, 1]`.
    pub thetas: Vec<f64>,
    pub nms_threshold: f64,
    pub subset: Subset,
    pub split: Split,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![1, 5, 10, 50, 100],
            thetas: vec![0.1, 0.3, 0.5],
            nms_threshold: 0.3,
            subset: Subset::All,
            split: Split::Test,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks[0] == 0 || self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "eval ks must be positive and strictly ascending, got {:?}",
                self.ks
            )));
        }
        if self.thetas.is_empty() || self.thetas.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(Error::Config(format!(
                "eval thetas must lie in (0, 1], got {:?}",
                self.thetas
            )));
        }
        if !(0.0..=1.0).contains(&self.nms_threshold) {
            return Err(Error::Config(format!(
                "nms_threshold must lie in [0, 1], got {}",
                self.nms_threshold
            )));
        }
        Ok(())
    }
}

/// Percentage of queries with a hit (tIoU at least `theta`) among their
/// first `k` predictions.
pub fn recall_at_k(
    ranked: &[&[ScoredMoment]],
    ground_truth: &[Interval],
    k: usize,
    theta: f64,
) -> Result<f64> {
    if ranked.is_empty() {
        return Err(Error::Usage("recall over an empty query set".into()));
    }
    if ranked.len() != ground_truth.len() {
        return Err(Error::Usage(format!(
            "{} prediction lists for {} ground truths",
            ranked.len(),
            ground_truth.len()
        )));
    }
    let hits = ranked
        .iter()
        .zip(ground_truth)
        .filter(|(preds, gt)| preds.iter().take(k).any(|m| tiou(&m.interval, gt) >= theta))
        .count();
    Ok(100.0 * hits as f64 / ranked.len() as f64)
}

/// Mean of one K's recalls over all `expected` thresholds.
pub fn mean_recall_k(recalls: &[f64], expected: usize) -> Result<f64> {
    if recalls.is_empty() || recalls.len() != expected {
        return Err(Error::Usage(format!(
            "mean recall needs all {expected} thresholds, got {}",
            recalls.len()
        )));
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Mean over the K values that are present; absent ones leave the denominator.
pub fn mean_recall_all(mean_recalls: &[Option<f64>]) -> Result<f64> {
    let present: Vec<f64> = mean_recalls.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Usage("mean over an empty set of K values".into()));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub split: Split,
    pub subset: Subset,
    pub queries: usize,
    /// Queries that had no predictions; each counts as a miss.
    pub queries_without_predictions: usize,
    pub ks: Vec<usize>,
    pub thetas: Vec<f64>,
    /// Percent recall; `recall[t][k]` is for `thetas[t]` and `ks[k]`.
    pub recall: Vec<Vec<f64>>,
    /// Mean over thresholds, one per K.
    pub mean_recall: Vec<f64>,
    pub mean_recall_all: f64,
}

impl MetricsReport {
    pub fn recall_at(&self, k: usize, theta: f64) -> Option<f64> {
        let ki = self.ks.iter().position(|&x| x == k)?;
        let ti = self.thetas.iter().position(|&x| x == theta)?;
        Some(self.recall[ti][ki])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Grid with one row per threshold and one column per K.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta");
        for k in &self.ks {
            write!(out, ",R@{k}").expect("write to string");
        }
        out.push('\n');
        for (theta, row) in self.thetas.iter().zip(&self.recall) {
            write!(out, "{theta}").expect("write to string");
            for r in row {
                write!(out, ",{r:.4}").expect("write to string");
            }
            out.push('\n');
        }
        out
    }
}

/// Evaluates final ranked lists over the configured split and subset.
pub fn evaluate(
    ds: &GroundingDataset,
    ranked: &Predictions,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let queries: Vec<_> = ds
        .queries_in(cfg.split)
        .filter(|q| cfg.subset == Subset::All || q.actionless)
        .collect();
    if queries.is_empty() {
        return Err(Error::Usage(format!(
            "no {:?} queries in the {:?} split to evaluate",
            cfg.subset, cfg.split
        )));
    }
    let empty: &[ScoredMoment] = &[];
    let mut missing = 0;
    let lists: Vec<&[ScoredMoment]> = queries
        .iter()
        .map(|q| match ranked.get(&q.id) {
            Some(v) if !v.is_empty() => v.as_slice(),
            _ => {
                log::warn!("query {:?} has no predictions; counted as a miss", q.id);
                missing += 1;
                empty
            }
        })
        .collect();
    let gts: Vec<Interval> = queries.iter().map(|q| q.ground_truth()).collect();
    let recall = cfg
        .thetas
        .iter()
        .map(|&t| cfg.ks.iter().map(|&k| recall_at_k(&lists, &gts, k, t)).collect())
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let mean_recall = (0..cfg.ks.len())
        .map(|ki| {
            let column: Vec<f64> = recall.iter().map(|row| row[ki]).collect();
            mean_recall_k(&column, cfg.thetas.len())
        })
        .collect::<Result<Vec<f64>>>()?;
    let all: Vec<Option<f64>> = mean_recall.iter().copied().map(Some).collect();
    Ok(MetricsReport {
        split: cfg.split,
        subset: cfg.subset,
        queries: queries.len(),
        queries_without_predictions: missing,
        ks: cfg.ks.clone(),
        thetas: cfg.thetas.clone(),
        mean_recall_all: mean_recall_all(&all)?,
        recall,
        mean_recall,
    })
}
