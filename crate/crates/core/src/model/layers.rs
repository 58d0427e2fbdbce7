use std::sync::Arc;

use super::layout::{EdgeIndex, GraphLayout};
use super::params::{AttentionLayer, HeadVars, ModelConfig, ParamVars};
use super::ModelError;
use crate::autodiff::{Matrix, Tape, Var};

pub const LEAKY_SLOPE: f64 = 0.2;

/// A recorded softmax output together with its segment ids.
#[derive(Clone, Debug)]
pub struct AttentionRecord {
    pub stage: &'static str,
    pub weights: Var,
    pub segments: Arc<[usize]>,
}

/// Multi-head attention aggregation over `edges` (which must carry a
/// self-loop per node). For an edge `j -> i` the head score is
/// `leaky_relu(a_dst·W h_i + a_src·W h_j)`, normalised over `i`'s incoming
/// edges; head outputs are concatenated.
pub fn attention_layer_on_tape(
    tape: &mut Tape,
    h: Var,
    edges: &EdgeIndex,
    heads: &[HeadVars],
    activate: bool,
    stage: &'static str,
    records: &mut Vec<AttentionRecord>,
) -> Result<Var, ModelError> {
    if tape.value(h).rows() != edges.n_nodes {
        return Err(ModelError::Mismatch(format!(
            "{stage}: {} rows for {} nodes",
            tape.value(h).rows(),
            edges.n_nodes
        )));
    }
    if !edges.has_all_self_loops() {
        return Err(ModelError::Invariant(format!(
            "{stage}: node without self-loop"
        )));
    }
    let mut outs = Vec::with_capacity(heads.len());
    for head in heads {
        let z = tape.matmul(h, head.weight)?;
        let s_dst = tape.matmul(z, head.att_dst)?;
        let s_src = tape.matmul(z, head.att_src)?;
        let e_dst = tape.gather_rows(s_dst, edges.dst.clone())?;
        let e_src = tape.gather_rows(s_src, edges.src.clone())?;
        let e = tape.add(e_dst, e_src)?;
        let e = tape.leaky_relu(e, LEAKY_SLOPE);
        let alpha = tape.segment_softmax(e, edges.dst.clone())?;
        records.push(AttentionRecord {
            stage,
            weights: alpha,
            segments: edges.dst.clone(),
        });
        let msg = tape.gather_rows(z, edges.src.clone())?;
        let msg = tape.scale_rows(msg, alpha)?;
        outs.push(tape.scatter_add_rows(msg, edges.dst.clone(), edges.n_nodes)?);
    }
    let out = if outs.len() == 1 {
        outs[0]
    } else {
        tape.rowwise_concat(&outs)?
    };
    Ok(if activate {
        tape.leaky_relu(out, LEAKY_SLOPE)
    } else {
        out
    })
}

/// Attention pooling of each segment's rows into one message per segment:
/// `msg_s = Σ_i softmax_s(h_i · q) (h_i W)`.
pub fn bridge_on_tape(
    tape: &mut Tape,
    h: Var,
    segments: Arc<[usize]>,
    n_segments: usize,
    score: Var,
    weight: Var,
    records: &mut Vec<AttentionRecord>,
) -> Result<Var, ModelError> {
    if tape.value(h).rows() == 0 {
        return Err(ModelError::Contract("bridge over an empty context".into()));
    }
    let s = tape.matmul(h, score)?;
    let alpha = tape.segment_softmax(s, segments.clone())?;
    records.push(AttentionRecord {
        stage: "bridge",
        weights: alpha,
        segments: segments.clone(),
    });
    let t = tape.matmul(h, weight)?;
    let t = tape.scale_rows(t, alpha)?;
    Ok(tape.scatter_add_rows(t, segments, n_segments)?)
}

/// `leaky_relu([h_protein | h_subtype] W + b)` for every protein row.
pub fn broadcast_on_tape(
    tape: &mut Tape,
    proteins: Var,
    subtype_rows: Var,
    weight: Var,
    bias: Var,
) -> Result<Var, ModelError> {
    let cat = tape.rowwise_concat(&[proteins, subtype_rows])?;
    let lin = tape.matmul(cat, weight)?;
    let lin = tape.add_row(lin, bias)?;
    Ok(tape.leaky_relu(lin, LEAKY_SLOPE))
}

/// Handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    /// Final protein embeddings, one row per stacked (context, protein).
    pub proteins: Var,
    /// Final metagraph node embeddings.
    pub cells: Var,
    /// Protein activations before the first bridge round.
    pub pre_bridge: Var,
    pub attention: Vec<AttentionRecord>,
}

fn check_finite(tape: &Tape, v: Var, stage: &'static str) -> Result<(), ModelError> {
    if tape.value(v).is_finite() {
        Ok(())
    } else {
        Err(ModelError::Numerical { stage })
    }
}

/// Full contextual pass: context layers, bridge into subtype nodes,
/// metagraph propagation, broadcast back to proteins, final context layer.
pub fn forward_on_tape(
    tape: &mut Tape,
    layout: &GraphLayout,
    pv: &ParamVars,
    config: &ModelConfig,
) -> Result<ForwardVars, ModelError> {
    let mut attention = Vec::new();
    let n_layers = pv.protein_layers.len();
    if n_layers != config.n_protein_layers || pv.metagraph_layers.len() != config.n_metagraph_layers
    {
        return Err(ModelError::Mismatch(
            "layer counts differ from config".into(),
        ));
    }
    if layout.n_rows() == 0 {
        return Err(ModelError::Contract(
            "knowledge graph has no context proteins".into(),
        ));
    }

    let mut h = tape.gather_rows(pv.protein_features, layout.row_protein.clone())?;
    for heads in &pv.protein_layers[..n_layers - 1] {
        h = attention_layer_on_tape(
            tape,
            h,
            &layout.protein_edges,
            heads,
            true,
            "context_layer",
            &mut attention,
        )?;
    }
    check_finite(tape, h, "context_layers")?;
    let pre_bridge = h;

    let ctx_msg = bridge_on_tape(
        tape,
        h,
        layout.row_context.clone(),
        layout.n_contexts(),
        pv.bridge_score,
        pv.bridge_weight,
        &mut attention,
    )?;
    let cell_msg =
        tape.scatter_add_rows(ctx_msg, layout.context_subtype.clone(), layout.n_cells)?;
    let mut cells = tape.add(pv.cell_features, cell_msg)?;
    check_finite(tape, cells, "bridge")?;

    let n_meta = pv.metagraph_layers.len();
    for (m, heads) in pv.metagraph_layers.iter().enumerate() {
        cells = attention_layer_on_tape(
            tape,
            cells,
            &layout.meta_edges,
            heads,
            m + 1 < n_meta,
            "metagraph",
            &mut attention,
        )?;
    }
    check_finite(tape, cells, "metagraph")?;

    let sub = tape.gather_rows(cells, layout.row_subtype.clone())?;
    let h = broadcast_on_tape(tape, h, sub, pv.broadcast_weight, pv.broadcast_bias)?;
    check_finite(tape, h, "broadcast")?;

    let proteins = attention_layer_on_tape(
        tape,
        h,
        &layout.protein_edges,
        &pv.protein_layers[n_layers - 1],
        false,
        "final_layer",
        &mut attention,
    )?;
    check_finite(tape, proteins, "final_layer")?;

    Ok(ForwardVars {
        proteins,
        cells,
        pre_bridge,
        attention,
    })
}

fn constant_heads(tape: &mut Tape, layer: &AttentionLayer) -> Vec<HeadVars> {
    layer
        .heads
        .iter()
        .map(|h| HeadVars {
            weight: tape.constant(h.weight.clone()),
            att_dst: tape.constant(h.att_dst.clone()),
            att_src: tape.constant(h.att_src.clone()),
        })
        .collect()
}

/// One attention layer evaluated on plain matrices. Returns the new node
/// embeddings and, per head, the attention weight of every directed edge
/// (ordered as in [`EdgeIndex::from_undirected`]).
pub fn context_attention_layer(
    h: &Matrix,
    edges: &[(usize, usize)],
    layer: &AttentionLayer,
    activate: bool,
) -> Result<(Matrix, EdgeIndex, Vec<Matrix>), ModelError> {
    let index = EdgeIndex::from_undirected(h.rows(), edges);
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let heads = constant_heads(&mut tape, layer);
    let mut records = Vec::new();
    let out = attention_layer_on_tape(
        &mut tape,
        hv,
        &index,
        &heads,
        activate,
        "layer",
        &mut records,
    )?;
    let weights = records
        .iter()
        .map(|r| tape.value(r.weights).clone())
        .collect();
    Ok((tape.value(out).clone(), index, weights))
}

/// Pools one context's protein embeddings into its subtype message.
/// Returns the `1 x d` message and the per-protein weights.
pub fn bridge_pool(
    proteins: &Matrix,
    score: &Matrix,
    weight: &Matrix,
) -> Result<(Matrix, Vec<f64>), ModelError> {
    let mut tape = Tape::new();
    let h = tape.constant(proteins.clone());
    let s = tape.constant(score.clone());
    let w = tape.constant(weight.clone());
    let mut records = Vec::new();
    let seg: Arc<[usize]> = vec![0; proteins.rows()].into();
    let msg = bridge_on_tape(&mut tape, h, seg, 1, s, w, &mut records)?;
    let alpha = tape.value(records[0].weights).as_slice().to_vec();
    Ok((tape.value(msg).clone(), alpha))
}

/// Attention layers over the metagraph (undirected edges, self-loops
/// added); all but the last layer apply the nonlinearity.
pub fn metagraph_propagate(
    cells: &Matrix,
    edges: &[(usize, usize)],
    layers: &[AttentionLayer],
) -> Result<Matrix, ModelError> {
    let index = EdgeIndex::from_undirected(cells.rows(), edges);
    let mut tape = Tape::new();
    let mut c = tape.constant(cells.clone());
    let mut records = Vec::new();
    for (m, layer) in layers.iter().enumerate() {
        let heads = constant_heads(&mut tape, layer);
        c = attention_layer_on_tape(
            &mut tape,
            c,
            &index,
            &heads,
            m + 1 < layers.len(),
            "metagraph",
            &mut records,
        )?;
    }
    Ok(tape.value(c).clone())
}

/// Conditions every protein row on one subtype embedding (`1 x d`).
pub fn broadcast_cell_to_protein(
    proteins: &Matrix,
    subtype: &Matrix,
    weight: &Matrix,
    bias: &Matrix,
) -> Result<Matrix, ModelError> {
    let mut tape = Tape::new();
    let p = tape.constant(proteins.clone());
    let s = tape.constant(subtype.clone());
    let s = tape.gather_rows(s, vec![0; proteins.rows()].into())?;
    let w = tape.constant(weight.clone());
    let b = tape.constant(bias.clone());
    let out = broadcast_on_tape(&mut tape, p, s, w, b)?;
    Ok(tape.value(out).clone())
}
