use std::fmt::Write as _;

use ctxppi_core::finetune::{
    build_finetune_dataset, eval_ranking, rank_contexts, ranking_csv, score_gene, score_genes,
    scores_csv, train_mlp, RiskLabelSet,
};

use super::{
    hash_parts, load_embeddings, read_input, stage_dir, write_json, write_output, CELL_EMBEDDINGS,
    MLP_FILE, PROTEIN_EMBEDDINGS,
};
use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::config::RunConfig;

pub(crate) const MLP_KEYS: &[&str] = &[
    "seed",
    "mlp_hidden",
    "mlp_epochs",
    "mlp_lr",
    "test_fraction",
];

pub(crate) fn load_labels(config: &RunConfig) -> anyhow::Result<RiskLabelSet> {
    let path = config.labels_path();
    let text = read_input(&path)?;
    Ok(RiskLabelSet::read_tsv(
        text.as_bytes(),
        &path.display().to_string(),
    )?)
}

/// Trains the risk head on pretrained embeddings and writes the head,
/// report, per-context scores and held-out ranking metrics to
/// `<out>/finetune`.
pub fn finetune(config: &RunConfig) -> anyhow::Result<()> {
    let table = load_embeddings(config)?;
    let labels = load_labels(config)?;
    let dataset = build_finetune_dataset(&table, &labels)?;
    if !dataset.missing_genes.is_empty() {
        eprintln!(
            "warning: {} labelled genes have no embedding",
            dataset.missing_genes.len()
        );
    }
    let (mlp, report) = train_mlp(&dataset, &config.mlp_config())?;

    let emb = config.embeddings_dir();
    let inputs = [
        read_input(&emb.join(PROTEIN_EMBEDDINGS))?,
        read_input(&emb.join(CELL_EMBEDDINGS))?,
        read_input(&config.labels_path())?,
    ];
    let extra: Vec<&[u8]> = inputs.iter().map(|s| s.as_bytes()).collect();
    let hash = hash_parts(config, MLP_KEYS, &extra);

    let dir = stage_dir(config, "finetune");
    save_checkpoint(
        &dir.join(MLP_FILE),
        &Checkpoint::from_mlp(hash, config.mlp_epochs, &mlp),
    )?;
    write_json(&dir.join("report.json"), &report)?;

    let all = score_genes(table.proteins(), &table, &mlp)?;
    write_output(&dir.join("scores.csv"), scores_csv(&all))?;

    let test = score_genes(report.split.test.iter().map(String::as_str), &table, &mlp)?;
    write_output(
        &dir.join("ranking.csv"),
        ranking_csv(&eval_ranking(&test, &labels)),
    )?;

    let mut by_gene = String::from("gene,rank,context,score\n");
    for g in &report.split.test {
        if let Ok(scores) = score_gene(g, &table, &mlp) {
            for (i, c) in rank_contexts(scores).iter().enumerate() {
                let _ = writeln!(by_gene, "{},{},{},{}", c.gene, i + 1, c.context, c.score);
            }
        }
    }
    write_output(&dir.join("context_ranking.csv"), by_gene)?;
    eprintln!(
        "fine-tuned on {} examples (train accuracy {:.3}); {} held-out examples",
        report.n_train_examples, report.train_accuracy, report.n_test_examples
    );
    Ok(())
}
