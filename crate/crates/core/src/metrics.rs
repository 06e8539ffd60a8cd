//! Threshold-free ranking metrics for binary labels.

use std::cmp::Ordering;

use crate::data::Split;
use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("scores contain NaN".into()));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Metric(format!("label {l} is not 0 or 1")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

/// `(positives, negatives)` per distinct score, in descending score order.
fn tie_groups(scores: &[f64], labels: &[u8]) -> Vec<(u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut last = f64::NAN;
    for i in order {
        if groups.is_empty() || scores[i] != last {
            groups.push((0, 0));
            last = scores[i];
        }
        let g = groups.last_mut().expect("just pushed");
        if labels[i] == 1 {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (p, n) = check(scores, labels)?;
    if p == 0 || n == 0 {
        return Err(Error::Metric(format!(
            "AUROC needs both classes, got {p} positives and {n} negatives"
        )));
    }
    // Doubled counts keep everything integral: 2 * wins + ties.
    let mut doubled: u128 = 0;
    let mut neg_below: u64 = n as u64;
    for (gp, gn) in tie_groups(scores, labels) {
        neg_below -= gn;
        doubled += 2 * gp as u128 * neg_below as u128 + gp as u128 * gn as u128;
    }
    Ok(doubled as f64 / (2 * p as u128 * n as u128) as f64)
}

/// Average precision: sum over distinct thresholds of precision times the
/// recall gained there, with equal scores ranked as one group.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (p, _) = check(scores, labels)?;
    if p == 0 {
        return Err(Error::Metric("AUPRC needs at least one positive".into()));
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut ap = 0.0;
    for (gp, gn) in tie_groups(scores, labels) {
        tp += gp;
        fp += gn;
        if gp > 0 {
            ap += (tp as f64 / (tp + fp) as f64) * (gp as f64 / p as f64);
        }
    }
    Ok(ap)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub split: Split,
    pub auroc: f64,
    pub auprc: f64,
    pub positives: usize,
    pub negatives: usize,
    pub config_hash: String,
}

impl MetricsReport {
    pub const AUPRC_METHOD: &'static str = "average_precision";

    pub fn compute(split: Split, scores: &[f64], labels: &[u8], config_hash: &str) -> Result<Self> {
        let (positives, negatives) = check(scores, labels)?;
        Ok(MetricsReport {
            split,
            auroc: auroc(scores, labels)?,
            auprc: auprc(scores, labels)?,
            positives,
            negatives,
            config_hash: config_hash.to_string(),
        })
    }

    pub fn prevalence(&self) -> f64 {
        self.positives as f64 / (self.positives + self.negatives) as f64
    }

    pub fn to_key_value(&self) -> String {
        format!(
            "split={}\nauroc={}\nauprc={}\nauprc_method={}\npositives={}\nnegatives={}\nconfig_hash={}\n",
            self.split,
            self.auroc,
            self.auprc,
            Self::AUPRC_METHOD,
            self.positives,
            self.negatives,
            self.config_hash
        )
    }

    pub const CSV_HEADER: &'static str = "split,auroc,auprc,positives,negatives,config_hash";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.split, self.auroc, self.auprc, self.positives, self.negatives, self.config_hash
        )
    }
}
