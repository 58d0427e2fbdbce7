//! Binary classification and ranking metrics.
//!
//! Every metric that needs both classes returns `None` when one is missing.

use serde::{Deserialize, Serialize};

fn check(scores: &[f64], labels: &[bool]) {
    assert_eq!(
        scores.len(),
        labels.len(),
        "scores and labels must have equal length"
    );
}

fn counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (pos, labels.len() - pos)
}

/// Indices sorted by descending score. NaN scores sort last.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Area under the ROC curve as the Mann–Whitney statistic: the probability
/// that a random positive outscores a random negative, ties counting 1/2.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    check(scores, labels);
    let (pos, neg) = counts(labels);
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of average ranks (1-based) of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Area under the precision–recall curve with step interpolation:
/// `Σ_t (R_t − R_{t−1}) P_t` over distinct score thresholds, descending.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    check(scores, labels);
    let (pos, _) = counts(labels);
    if pos == 0 {
        return None;
    }
    let idx = descending(scores);
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            tp += labels[idx[j]] as usize;
            seen += 1;
            j += 1;
        }
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
        i = j;
    }
    Some(ap)
}

/// Accuracy and F1 with `score >= threshold` predicted positive.
/// F1 is `None` when there are no positives and none are predicted.
pub fn accuracy_f1(scores: &[f64], labels: &[bool], threshold: f64) -> (f64, Option<f64>) {
    check(scores, labels);
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let acc = if labels.is_empty() {
        0.0
    } else {
        (tp + tn) as f64 / labels.len() as f64
    };
    let denom = 2 * tp + fp + fn_;
    let f1 = (denom > 0).then(|| 2.0 * tp as f64 / denom as f64);
    (acc, f1)
}

/// Held-out link prediction quality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub auroc: f64,
    pub ap: f64,
    pub acc: f64,
    pub f1: f64,
}

/// AUROC, AP, and accuracy/F1 at 0.5; `None` for a single-class set.
pub fn link_metrics(scores: &[f64], labels: &[bool]) -> Option<LinkMetrics> {
    let auroc = auroc(scores, labels)?;
    let ap = average_precision(scores, labels)?;
    let (acc, f1) = accuracy_f1(scores, labels, 0.5);
    Some(LinkMetrics {
        auroc,
        ap,
        acc,
        f1: f1.unwrap_or(0.0),
    })
}

/// Labels ordered by descending score, ties broken by ascending id.
pub fn ranked_labels<S: AsRef<str>>(items: &[(S, f64, bool)]) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.sort_by(|&a, &b| {
        items[b]
            .1
            .total_cmp(&items[a].1)
            .then_with(|| items[a].0.as_ref().cmp(items[b].0.as_ref()))
    });
    idx.into_iter().map(|i| items[i].2).collect()
}

fn hits(ranked: &[bool], k: usize) -> usize {
    ranked.iter().take(k).filter(|&&l| l).count()
}

/// Positives among the top `k` over `min(k, n)`.
pub fn precision_at_k(ranked: &[bool], k: usize) -> Option<f64> {
    let k = k.min(ranked.len());
    (k > 0).then(|| hits(ranked, k) as f64 / k as f64)
}

/// Positives among the top `k` over all positives.
pub fn recall_at_k(ranked: &[bool], k: usize) -> Option<f64> {
    let total = hits(ranked, ranked.len());
    (total > 0).then(|| hits(ranked, k) as f64 / total as f64)
}

/// Mean of precision at each positive rank `<= k`, normalised by
/// `min(k, total positives)`.
pub fn ap_at_k(ranked: &[bool], k: usize) -> Option<f64> {
    let total = hits(ranked, ranked.len());
    if total == 0 {
        return None;
    }
    let mut found = 0;
    let mut sum = 0.0;
    for (i, &l) in ranked.iter().take(k).enumerate() {
        if l {
            found += 1;
            sum += found as f64 / (i + 1) as f64;
        }
    }
    Some(sum / k.min(total) as f64)
}

/// Per-context gene ranking quality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub ap5: f64,
    pub ap10: f64,
    pub auprc: f64,
    pub auroc: f64,
    pub p5: f64,
    pub p10: f64,
    pub r5: f64,
    pub r10: f64,
}

impl RankingMetrics {
    pub const NAMES: [&'static str; 8] =
        ["ap5", "ap10", "auprc", "auroc", "p5", "p10", "r5", "r10"];

    pub fn values(&self) -> [f64; 8] {
        [
            self.ap5, self.ap10, self.auprc, self.auroc, self.p5, self.p10, self.r5, self.r10,
        ]
    }
}

/// Ranking metrics over `(gene, score, label)` items. Requires at least one
/// positive and one negative.
pub fn ranking_metrics<S: AsRef<str>>(items: &[(S, f64, bool)]) -> Option<RankingMetrics> {
    let scores: Vec<f64> = items.iter().map(|i| i.1).collect();
    let labels: Vec<bool> = items.iter().map(|i| i.2).collect();
    let auroc = auroc(&scores, &labels)?;
    let auprc = average_precision(&scores, &labels)?;
    let ranked = ranked_labels(items);
    Some(RankingMetrics {
        ap5: ap_at_k(&ranked, 5)?,
        ap10: ap_at_k(&ranked, 10)?,
        auprc,
        auroc,
        p5: precision_at_k(&ranked, 5)?,
        p10: precision_at_k(&ranked, 10)?,
        r5: recall_at_k(&ranked, 5)?,
        r10: recall_at_k(&ranked, 10)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        let s = [0.9, 0.8, 0.4, 0.1];
        let l = [true, false, true, false];
        assert_eq!(auroc(&s, &l), Some(0.75));
        let r = [true, false, true, true, false, false];
        assert_eq!(precision_at_k(&r, 5), Some(0.6));
        assert_eq!(recall_at_k(&r, 5), Some(1.0));
        let ap5 = ap_at_k(&r, 5).unwrap();
        assert!((ap5 - (1.0 + 2.0 / 3.0 + 3.0 / 4.0) / 3.0).abs() < 1e-15);
        assert!((ap5 - 0.8056).abs() < 1e-4);
    }

    #[test]
    fn single_class_is_absent() {
        assert_eq!(auroc(&[0.1, 0.2], &[true, true]), None);
        assert_eq!(average_precision(&[0.1], &[false]), None);
        assert!(link_metrics(&[0.3], &[true]).is_none());
    }
}
