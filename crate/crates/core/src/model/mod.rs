//! The contextual attention GNN.
//!
//! Protein layers run inside each context graph with weights shared across
//! contexts. A learned attention pooling ("bridge") sends each context's
//! proteins into its subtype node, an attention layer propagates over the
//! metagraph, and each protein is then conditioned on its subtype embedding
//! before a final context layer. Protein and cell embeddings share one
//! latent dimension.

mod embedding;
mod layers;
mod layout;
mod params;

use thiserror::Error;

use crate::autodiff::{sigmoid, AutodiffError, Tape};
use crate::kg::KnowledgeGraph;

pub use embedding::EmbeddingTable;
pub use layers::{
    attention_layer_on_tape, bridge_on_tape, bridge_pool, broadcast_cell_to_protein,
    context_attention_layer, forward_on_tape, metagraph_propagate, AttentionRecord, ForwardVars,
    LEAKY_SLOPE,
};
pub use layout::{EdgeIndex, GraphLayout};
pub use params::{
    init_params, init_params_sized, AttentionHead, AttentionLayer, HeadVars, ModelConfig,
    ModelParams, ParamVars,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("non-finite values after {stage}")]
    Numerical { stage: &'static str },
    #[error("parameter mismatch: {0}")]
    Mismatch(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Result of a value-only forward pass, with the intermediate quantities
/// the tests and diagnostics look at.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub table: EmbeddingTable,
    pub pre_bridge: crate::autodiff::Matrix,
    /// `(stage, weights, segment ids)` of every softmax evaluated.
    pub attention: Vec<(&'static str, Vec<f64>, std::sync::Arc<[usize]>)>,
}

fn check_params(
    kg: &KnowledgeGraph,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(), ModelError> {
    config.validate()?;
    let d = config.latent_dim;
    if params.protein_features.shape() != (kg.global.n_proteins(), d)
        || params.cell_features.shape() != (kg.metagraph.n_nodes(), d)
    {
        return Err(ModelError::Mismatch(format!(
            "input tables {:?}/{:?} do not fit {} proteins, {} cell nodes, dim {d}",
            params.protein_features.shape(),
            params.cell_features.shape(),
            kg.global.n_proteins(),
            kg.metagraph.n_nodes()
        )));
    }
    Ok(())
}

pub fn forward_trace(
    kg: &KnowledgeGraph,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<ForwardTrace, ModelError> {
    check_params(kg, params, config)?;
    let layout = GraphLayout::new(kg);
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let out = forward_on_tape(&mut tape, &layout, &pv, config)?;
    let table = table_from_forward(kg, &layout, &tape, &out);
    let attention = out
        .attention
        .iter()
        .map(|r| {
            (
                r.stage,
                tape.value(r.weights).as_slice().to_vec(),
                r.segments.clone(),
            )
        })
        .collect();
    Ok(ForwardTrace {
        table,
        pre_bridge: tape.value(out.pre_bridge).clone(),
        attention,
    })
}

/// Embeds every (context, protein) pair and every metagraph node.
pub fn forward(
    kg: &KnowledgeGraph,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<EmbeddingTable, ModelError> {
    forward_trace(kg, params, config).map(|t| t.table)
}

pub(crate) fn table_from_forward(
    kg: &KnowledgeGraph,
    layout: &GraphLayout,
    tape: &Tape,
    out: &ForwardVars,
) -> EmbeddingTable {
    let contexts = kg.contexts().iter().map(|c| c.context_id.clone()).collect();
    let row_protein = layout
        .row_protein
        .iter()
        .map(|&p| kg.global.name(p).to_string())
        .collect();
    let names = kg.metagraph.node_names();
    // Metagraph numbering (subtypes then cell types) differs from a plain
    // sort when names interleave, so rows are reordered by name here.
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| names[a].cmp(&names[b]));
    let cells_src = tape.value(out.cells);
    let mut cells = crate::autodiff::Matrix::zeros(names.len(), cells_src.cols());
    for (dst, &src) in order.iter().enumerate() {
        cells.row_mut(dst).copy_from_slice(cells_src.row(src));
    }
    let cell_nodes = order.iter().map(|&i| names[i].clone()).collect();
    EmbeddingTable::from_stacked(
        contexts,
        layout.offsets.clone(),
        row_protein,
        tape.value(out.proteins).clone(),
        cell_nodes,
        cells,
    )
}

/// Link probability `sigmoid(z_u · z_v)`.
pub fn edge_score(z_u: &[f64], z_v: &[f64]) -> Result<f64, ModelError> {
    if z_u.len() != z_v.len() {
        return Err(ModelError::Contract(format!(
            "edge_score on vectors of length {} and {}",
            z_u.len(),
            z_v.len()
        )));
    }
    Ok(sigmoid(z_u.iter().zip(z_v).map(|(a, b)| a * b).sum()))
}
