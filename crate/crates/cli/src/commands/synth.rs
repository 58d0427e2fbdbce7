use ctxppi_core::kg::summarize;

use super::{stage_dir, write_json, SUMMARY_FILE};
use crate::config::RunConfig;
use crate::synth::{generate, write};

/// Generates the planted benchmark into `<out>/graph`.
pub fn synth(config: &RunConfig) -> anyhow::Result<()> {
    let bundle = generate(&config.synth, config.seed())?;
    write(&stage_dir(config, "graph"), &bundle)?;
    write_json(&config.out.join(SUMMARY_FILE), &summarize(&bundle.kg))
}
