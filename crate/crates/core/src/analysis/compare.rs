use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::metrics::RankingMetrics;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: String,
    pub wins: usize,
    pub total: usize,
    /// `100 · wins / total`, rounded to two decimals.
    pub percentage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub metrics: Vec<MetricComparison>,
}

impl ComparisonReport {
    pub fn get(&self, metric: &str) -> Option<&MetricComparison> {
        self.metrics.iter().find(|m| m.metric == metric)
    }

    /// `metric,wins,total,percentage`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,wins,total,percentage\n");
        for m in &self.metrics {
            let _ = writeln!(s, "{},{},{},{:.2}", m.metric, m.wins, m.total, m.percentage);
        }
        s
    }
}

pub fn win_percentage(wins: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    (10_000.0 * wins as f64 / total as f64).round() / 100.0
}

/// Share of contexts in which `model` strictly beats `baseline`, per
/// ranking metric. Contexts undefined for both sides are skipped.
pub fn compare_models(
    model: &BTreeMap<String, Option<RankingMetrics>>,
    baseline: &BTreeMap<String, Option<RankingMetrics>>,
) -> Result<ComparisonReport, AnalysisError> {
    if !model.keys().eq(baseline.keys()) {
        return Err(AnalysisError::Contract(
            "model and baseline cover different contexts".into(),
        ));
    }
    let mut pairs = Vec::new();
    for (ctx, a) in model {
        match (a, &baseline[ctx]) {
            (Some(a), Some(b)) => pairs.push((a.values(), b.values())),
            (None, None) => {}
            _ => {
                return Err(AnalysisError::Contract(format!(
                    "context {ctx} has metrics on only one side"
                )))
            }
        }
    }
    let metrics = RankingMetrics::NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let wins = pairs.iter().filter(|(a, b)| a[i] > b[i]).count();
            MetricComparison {
                metric: name.to_string(),
                wins,
                total: pairs.len(),
                percentage: win_percentage(wins, pairs.len()),
            }
        })
        .collect();
    Ok(ComparisonReport { metrics })
}
