use std::path::{Path, PathBuf};

use anyhow::Context as _;
use ctxppi_core::kg::io::{
    open, read_deg_table, read_global_ppi, read_hierarchy, read_lr_table, write_bundle,
};
use ctxppi_core::kg::{construct, summarize};

use super::{stage_dir, write_json, write_output, SUMMARY_FILE};
use crate::config::{ConfigError, RunConfig};

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, ConfigError> {
    p.as_deref()
        .ok_or_else(|| ConfigError::Invalid(format!("build-graph needs `{key}`")))
}

/// Constructs the knowledge graph from raw tables and writes the bundle
/// to `<out>/graph` and the data summary to `<out>/summary.json`.
pub fn build_graph(config: &RunConfig) -> anyhow::Result<()> {
    let ppi = required(&config.ppi, "ppi")?;
    let deg = required(&config.deg, "deg")?;
    let hierarchy = required(&config.hierarchy, "hierarchy")?;

    let (global, dropped) = read_global_ppi(open(ppi)?, &ppi.display().to_string())?;
    if dropped > 0 {
        eprintln!("warning: {dropped} self-interactions dropped from the PPI");
    }
    let deg_table = read_deg_table(open(deg)?, &deg.display().to_string())?;
    let lr_table = match &config.lr_table {
        Some(p) => read_lr_table(open(p)?, &p.display().to_string())?,
        None => Vec::new(),
    };
    let hierarchy = read_hierarchy(open(hierarchy)?, &hierarchy.display().to_string())?;

    let (kg, log) = construct(
        global,
        &deg_table,
        &lr_table,
        &hierarchy,
        &config.construct_options(),
    )?;
    if log.unknown_genes > 0 {
        eprintln!(
            "warning: {} activated genes are absent from the reference PPI",
            log.unknown_genes
        );
    }
    let mut rejected = String::from("context\tlargest_component\n");
    for (ctx, size) in &log.rejected_contexts {
        eprintln!("warning: context {ctx} skipped (largest component {size})");
        rejected.push_str(&format!("{ctx}\t{size}\n"));
    }

    let dir = stage_dir(config, "graph");
    write_bundle(&dir, &kg).with_context(|| format!("writing bundle {}", dir.display()))?;
    write_output(&config.out.join("rejected_contexts.tsv"), rejected)?;
    write_json(&config.out.join(SUMMARY_FILE), &summarize(&kg))
}
