//! Subcommand implementations. Every command reads its inputs from the
//! resolved [`RunConfig`] and writes only under `config.out`.

mod analyze;
mod build_graph;
mod compare;
mod finetune;
mod pretrain;
mod report;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use ctxppi_core::kg::io::{
    read_bundle, BUNDLE_ACTIVATED, BUNDLE_CONTEXT_EDGES, BUNDLE_GLOBAL, BUNDLE_HIERARCHY,
    BUNDLE_METAGRAPH,
};
use ctxppi_core::kg::KnowledgeGraph;
use ctxppi_core::model::EmbeddingTable;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::RunConfig;

pub use analyze::analyze;
pub use build_graph::build_graph;
pub use compare::compare;
pub use finetune::finetune;
pub use pretrain::{pretrain, pretrain_hash};
pub use report::report;
pub use synth::synth;

pub const SUMMARY_FILE: &str = "summary.json";
pub const PROTEIN_EMBEDDINGS: &str = "protein_embeddings.tsv";
pub const CELL_EMBEDDINGS: &str = "cell_embeddings.tsv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MLP_FILE: &str = "mlp.bin";

/// A missing or unreadable input; reported with exit code 2.
#[derive(Debug, Error)]
#[error("{path}: {message}")]
pub struct InputError {
    pub path: String,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    BuildGraph,
    Synth,
    Pretrain,
    Finetune,
    Analyze,
    Compare,
    Report,
}

pub fn run(command: Command, config: &RunConfig) -> anyhow::Result<()> {
    config.validate()?;
    match command {
        Command::BuildGraph => build_graph(config),
        Command::Synth => synth(config),
        Command::Pretrain => pretrain(config).map(|_| ()),
        Command::Finetune => finetune(config),
        Command::Analyze => analyze(config),
        Command::Compare => compare(config),
        Command::Report => report(config),
    }
}

pub(crate) fn read_input(path: &Path) -> Result<String, InputError> {
    fs::read_to_string(path).map_err(|e| InputError {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub(crate) fn write_output(path: &Path, body: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    write_output(path, serde_json::to_string_pretty(value)? + "\n")
}

pub(crate) fn load_graph(config: &RunConfig) -> anyhow::Result<KnowledgeGraph> {
    let dir = config.graph_dir();
    read_bundle(&dir).with_context(|| format!("loading graph bundle {}", dir.display()))
}

pub(crate) fn load_embeddings(config: &RunConfig) -> anyhow::Result<EmbeddingTable> {
    let dir = config.embeddings_dir();
    let p = read_input(&dir.join(PROTEIN_EMBEDDINGS))?;
    let c = read_input(&dir.join(CELL_EMBEDDINGS))?;
    EmbeddingTable::from_tsv(&p, &c)
        .map_err(|e| InputError {
            path: dir.display().to_string(),
            message: e.to_string(),
        })
        .map_err(Into::into)
}

pub(crate) fn stage_dir(config: &RunConfig, stage: &str) -> PathBuf {
    config.out.join(stage)
}

/// First eight bytes of a SHA-256 over the named config keys and any
/// extra byte strings.
pub(crate) fn hash_parts(config: &RunConfig, keys: &[&str], extra: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for k in keys {
        h.update(format!("{k}={}\n", config.get(k).unwrap_or_default()).as_bytes());
    }
    for bytes in extra {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Concatenated bundle files, for hashing.
pub(crate) fn bundle_bytes(dir: &Path) -> Result<Vec<u8>, InputError> {
    let mut out = Vec::new();
    for name in [
        BUNDLE_GLOBAL,
        BUNDLE_ACTIVATED,
        BUNDLE_CONTEXT_EDGES,
        BUNDLE_METAGRAPH,
        BUNDLE_HIERARCHY,
    ] {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| InputError {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&bytes);
    }
    Ok(out)
}
