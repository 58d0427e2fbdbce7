use ctxppi_core::analysis::{
    cell_similarity, marker_contrast, marker_csv, protein_context_similarity, AnalysisError,
};

use super::finetune::load_labels;
use super::{load_embeddings, stage_dir, write_output};
use crate::config::RunConfig;

fn file_stem(gene: &str) -> String {
    gene.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes the metagraph similarity map, marker rankings and one
/// cross-context similarity map per requested gene to `<out>/analyze`.
/// Genes active in fewer than two contexts are skipped with a warning.
pub fn analyze(config: &RunConfig) -> anyhow::Result<()> {
    let table = load_embeddings(config)?;
    let dir = stage_dir(config, "analyze");

    let cells = cell_similarity(&table)?;
    write_output(&dir.join("cell_similarity.csv"), cells.to_csv())?;
    write_output(
        &dir.join("cell_similarity.svg"),
        cells.to_svg("Cell type and subtype similarity"),
    )?;
    write_output(
        &dir.join("markers.csv"),
        marker_csv(&marker_contrast(&table)?),
    )?;

    let genes: Vec<String> = if config.genes.is_empty() {
        if config.labels_path().exists() {
            load_labels(config)?.positives().iter().cloned().collect()
        } else {
            Vec::new()
        }
    } else {
        config.genes.clone()
    };
    for gene in &genes {
        match protein_context_similarity(gene, &table) {
            Ok(m) => {
                let stem = file_stem(gene);
                write_output(&dir.join("genes").join(format!("{stem}.csv")), m.to_csv())?;
                write_output(
                    &dir.join("genes").join(format!("{stem}.svg")),
                    m.to_svg(&format!("{gene} across contexts")),
                )?;
            }
            Err(e @ AnalysisError::InsufficientContexts { .. }) => eprintln!("warning: {e}"),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}
