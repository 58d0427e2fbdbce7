//! Brute-force reference implementations used to check the fast metrics.

#![allow(dead_code)]

/// Pair counting over every (positive, negative) pair.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    (pairs > 0.0).then(|| num / pairs)
}

/// Recomputes precision and recall from scratch at every distinct threshold.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let total = labels.iter().filter(|&&l| l).count();
    if total == 0 {
        return None;
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let selected: Vec<bool> = scores
            .iter()
            .zip(labels)
            .filter(|(&s, _)| s >= t)
            .map(|(_, &l)| l)
            .collect();
        let tp = selected.iter().filter(|&&l| l).count() as f64;
        let recall = tp / total as f64;
        let precision = tp / selected.len() as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}

/// Prefix enumeration over an already ranked label list.
pub fn ranking_at_k(ranked: &[bool], k: usize) -> (Option<f64>, Option<f64>, Option<f64>) {
    let total = ranked.iter().filter(|&&l| l).count();
    let kk = k.min(ranked.len());
    let prefix = |m: usize| ranked[..m].iter().filter(|&&l| l).count() as f64;
    let p = (kk > 0).then(|| prefix(kk) / kk as f64);
    let r = (total > 0).then(|| prefix(kk) / total as f64);
    let ap = (total > 0).then(|| {
        let mut s = 0.0;
        for m in 1..=kk {
            if ranked[m - 1] {
                s += prefix(m) / m as f64;
            }
        }
        s / k.min(total) as f64
    });
    (p, r, ap)
}
