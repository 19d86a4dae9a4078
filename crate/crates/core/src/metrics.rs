//! Evaluation measures: micro-F1, accuracy, binary F1, EM@1, Defect@5 and
//! the cross-lingual transfer gap.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::RelevanceLabel;
use crate::error::{Error, Result};
use crate::model::norm;

/// Per-class true positives, false positives and false negatives, indexed by label code.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: [u64; 3],
    pub fp: [u64; 3],
    pub fn_: [u64; 3],
}

fn check_lengths<T>(predictions: &[T], labels: &[T]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::validation("metric over zero samples"));
    }
    Ok(())
}

impl ConfusionCounts {
    pub fn from_predictions(
        predictions: &[RelevanceLabel],
        labels: &[RelevanceLabel],
    ) -> Result<Self> {
        check_lengths(predictions, labels)?;
        let mut c = ConfusionCounts::default();
        for (p, y) in predictions.iter().zip(labels) {
            let (p, y) = (p.code() as usize, y.code() as usize);
            if p == y {
                c.tp[p] += 1;
            } else {
                c.fp[p] += 1;
                c.fn_[y] += 1;
            }
        }
        Ok(c)
    }

    /// `ΣTP / (ΣTP + ½(ΣFP + ΣFN))`
    pub fn micro_f1(&self) -> f64 {
        let tp: u64 = self.tp.iter().sum();
        let fp: u64 = self.fp.iter().sum();
        let fn_: u64 = self.fn_.iter().sum();
        let denom = tp as f64 + 0.5 * (fp + fn_) as f64;
        if denom == 0.0 {
            0.0
        } else {
            tp as f64 / denom
        }
    }
}

pub fn micro_f1(predictions: &[RelevanceLabel], labels: &[RelevanceLabel]) -> Result<f64> {
    Ok(ConfusionCounts::from_predictions(predictions, labels)?.micro_f1())
}

pub fn accuracy<T: PartialEq>(predictions: &[T], labels: &[T]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// F1 of `positive` against everything else; 0 when there are no true positives.
pub fn binary_f1<T: PartialEq>(predictions: &[T], labels: &[T], positive: &T) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (p, y) in predictions.iter().zip(labels) {
        match (p == positive, y == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(f1_from_counts(tp, fp, fn_))
}

pub fn f1_from_counts(tp: u64, fp: u64, fn_: u64) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// Products shown for one query, position 1 first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub query_id: String,
    pub product_ids: Vec<String>,
}

impl RankedResult {
    pub fn validate(&self) -> Result<()> {
        if self.product_ids.is_empty() {
            return Err(Error::validation(format!(
                "empty ranking for {}",
                self.query_id
            )));
        }
        let mut seen = HashSet::new();
        for id in &self.product_ids {
            if !seen.insert(id) {
                return Err(Error::validation(format!(
                    "duplicate {id} in ranking for {}",
                    self.query_id
                )));
            }
        }
        Ok(())
    }
}

fn ranked_fraction(
    results: &[RankedResult],
    mut good: impl FnMut(&RankedResult) -> Result<bool>,
) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::validation("ranking metric over zero queries"));
    }
    let mut n = 0;
    for r in results {
        r.validate()?;
        if good(r)? {
            n += 1;
        }
    }
    Ok(n as f64 / results.len() as f64)
}

/// Fraction of queries whose top product is an exact match under `oracle`.
pub fn em_at_1(
    results: &[RankedResult],
    oracle: impl Fn(&str, &str) -> Option<RelevanceLabel>,
) -> Result<f64> {
    ranked_fraction(results, |r| {
        let label = oracle(&r.query_id, &r.product_ids[0]).ok_or_else(|| {
            Error::validation(format!("no label for {}::{}", r.query_id, r.product_ids[0]))
        })?;
        Ok(label == RelevanceLabel::Exact)
    })
}

/// Fraction of queries with no irrelevant product in the first five positions
/// (or in all positions of a shorter list).
pub fn defect_at_5(
    results: &[RankedResult],
    oracle: impl Fn(&str, &str) -> Option<RelevanceLabel>,
) -> Result<f64> {
    ranked_fraction(results, |r| {
        for pid in r.product_ids.iter().take(5) {
            let label = oracle(&r.query_id, pid)
                .ok_or_else(|| Error::validation(format!("no label for {}::{pid}", r.query_id)))?;
            if label == RelevanceLabel::Irrelevant {
                return Ok(false);
            }
        }
        Ok(true)
    })
}

/// Cross-lingual transfer gap and the number of pairs left out of it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferGap {
    pub gap: f64,
    pub used: usize,
    pub skipped: usize,
}

/// Component-wise mean of a set of vectors.
pub fn mean_vector(vectors: &[&[f64]]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::validation("mean of zero vectors"))?;
    let mut m = vec![0.0; first.len()];
    for v in vectors {
        if v.len() != m.len() {
            return Err(Error::validation("vectors of different dimension"));
        }
        for (a, b) in m.iter_mut().zip(v.iter()) {
            *a += b;
        }
    }
    let inv = 1.0 / vectors.len() as f64;
    m.iter_mut().for_each(|a| *a *= inv);
    Ok(m)
}

/// `(1/m) Σ ‖e2 − e1‖ / ‖e2 − mean‖`; pairs whose `e2` lies within 1e-9 of
/// `tc_mean` are skipped and counted.
pub fn transfer_gap(pairs: &[(Vec<f64>, Vec<f64>)], tc_mean: &[f64]) -> Result<TransferGap> {
    if pairs.len() < 2 {
        return Err(Error::validation(
            "transfer gap needs at least two representation pairs",
        ));
    }
    let mut total = 0.0;
    let mut used = 0;
    let mut skipped = 0;
    for (e1, e2) in pairs {
        if e1.len() != tc_mean.len() || e2.len() != tc_mean.len() {
            return Err(Error::validation("representation dimension mismatch"));
        }
        let diff: Vec<f64> = e2.iter().zip(e1).map(|(a, b)| a - b).collect();
        let spread: Vec<f64> = e2.iter().zip(tc_mean).map(|(a, b)| a - b).collect();
        let d = norm(&spread);
        if d <= 1e-9 {
            skipped += 1;
            continue;
        }
        total += norm(&diff) / d;
        used += 1;
    }
    if skipped > 0 {
        log::warn!("transfer gap skipped {skipped} pair(s) at the target-language mean");
    }
    if used == 0 {
        return Err(Error::validation(
            "every representation pair coincides with the mean",
        ));
    }
    Ok(TransferGap {
        gap: total / used as f64,
        used,
        skipped,
    })
}

/// Transfer gap with `tc_mean` taken as the mean of all target-side vectors.
pub fn transfer_gap_auto(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<TransferGap> {
    let e2: Vec<&[f64]> = pairs.iter().map(|(_, b)| b.as_slice()).collect();
    if e2.len() < 2 {
        return Err(Error::validation(
            "transfer gap needs at least two representation pairs",
        ));
    }
    transfer_gap(pairs, &mean_vector(&e2)?)
}

/// Named metric values plus bookkeeping, as printed by `csrm eval`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    pub n_samples: usize,
    pub skipped_pairs: usize,
    pub config_hash: String,
}
