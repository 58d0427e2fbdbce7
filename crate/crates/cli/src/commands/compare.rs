use std::collections::BTreeMap;

use ctxppi_core::analysis::{compare_models, random_walk_embeddings, ComparisonReport};
use ctxppi_core::finetune::{
    build_finetune_dataset, eval_ranking, ranking_csv, score_genes, train_mlp, FinetuneReport,
};
use ctxppi_core::metrics::RankingMetrics;
use serde::Serialize;

use super::finetune::load_labels;
use super::{
    load_embeddings, load_graph, read_input, stage_dir, write_json, write_output, InputError,
    MLP_FILE,
};
use crate::checkpoint::load_checkpoint;
use crate::config::RunConfig;

/// Mean of each ranking metric over contexts where it is defined.
pub fn mean_metrics(
    per_context: &BTreeMap<String, Option<RankingMetrics>>,
) -> BTreeMap<String, f64> {
    let defined: Vec<[f64; 8]> = per_context.values().flatten().map(|m| m.values()).collect();
    if defined.is_empty() {
        return BTreeMap::new();
    }
    RankingMetrics::NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mean = defined.iter().map(|v| v[i]).sum::<f64>() / defined.len() as f64;
            (name.to_string(), mean)
        })
        .collect()
}

#[derive(Serialize)]
struct CompareSummary<'a> {
    model_mean: BTreeMap<String, f64>,
    baseline_mean: BTreeMap<String, f64>,
    wins: &'a ComparisonReport,
}

/// Ranks held-out genes with the fine-tuned contextual model and with a
/// random-walk baseline head trained on the same genes, then counts
/// per-context wins. Writes to `<out>/compare`.
pub fn compare(config: &RunConfig) -> anyhow::Result<()> {
    let labels = load_labels(config)?;
    let table = load_embeddings(config)?;
    let ft = stage_dir(config, "finetune");
    let mlp = load_checkpoint(&ft.join(MLP_FILE))?.into_mlp()?;
    let report_path = ft.join("report.json");
    let report: FinetuneReport =
        serde_json::from_str(&read_input(&report_path)?).map_err(|e| InputError {
            path: report_path.display().to_string(),
            message: e.to_string(),
        })?;
    let test_genes: Vec<&str> = report.split.test.iter().map(String::as_str).collect();
    let model = eval_ranking(
        &score_genes(test_genes.iter().copied(), &table, &mlp)?,
        &labels,
    );

    let kg = load_graph(config)?;
    let baseline_table =
        random_walk_embeddings(&kg.global, &config.random_walk_config())?.replicate(&kg)?;
    let dataset = build_finetune_dataset(&baseline_table, &labels)?;
    let (baseline_mlp, baseline_report) = train_mlp(&dataset, &config.mlp_config())?;
    if baseline_report.split != report.split {
        eprintln!("warning: baseline gene split differs from the model split; scoring the model's held-out genes");
    }
    let baseline = eval_ranking(
        &score_genes(test_genes.iter().copied(), &baseline_table, &baseline_mlp)?,
        &labels,
    );

    let wins = compare_models(&model, &baseline)?;
    let dir = stage_dir(config, "compare");
    write_output(&dir.join("model_ranking.csv"), ranking_csv(&model))?;
    write_output(&dir.join("baseline_ranking.csv"), ranking_csv(&baseline))?;
    write_output(&dir.join("comparison.csv"), wins.to_csv())?;
    write_json(
        &dir.join("summary.json"),
        &CompareSummary {
            model_mean: mean_metrics(&model),
            baseline_mean: mean_metrics(&baseline),
            wins: &wins,
        },
    )
}
