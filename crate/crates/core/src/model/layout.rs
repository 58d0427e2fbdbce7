use std::sync::Arc;

use crate::kg::KnowledgeGraph;

/// Directed message-passing edges with a self-loop on every node, sorted
/// by destination then source.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeIndex {
    pub n_nodes: usize,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
}

impl EdgeIndex {
    /// Both directions of every undirected edge plus self-loops. Repeated
    /// edges and explicit self-pairs in the input are ignored.
    pub fn from_undirected(n_nodes: usize, edges: &[(usize, usize)]) -> Self {
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(2 * edges.len() + n_nodes);
        for &(a, b) in edges {
            if a != b {
                pairs.push((b, a));
                pairs.push((a, b));
            }
        }
        pairs.extend((0..n_nodes).map(|i| (i, i)));
        // (dst, src) ordering
        pairs.sort_unstable();
        pairs.dedup();
        let dst: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let src: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        Self {
            n_nodes,
            src: src.into(),
            dst: dst.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn has_all_self_loops(&self) -> bool {
        let mut seen = vec![false; self.n_nodes];
        for (&s, &d) in self.src.iter().zip(self.dst.iter()) {
            if s == d {
                seen[s] = true;
            }
        }
        seen.into_iter().all(|x| x)
    }
}

/// Index bookkeeping that stacks every context's proteins into one table.
///
/// Row `offsets[k] + i` holds local node `i` of context `k` (contexts in
/// id order). Metagraph nodes use the knowledge graph's numbering.
#[derive(Clone, Debug)]
pub struct GraphLayout {
    pub offsets: Vec<usize>,
    pub row_protein: Arc<[usize]>,
    pub row_context: Arc<[usize]>,
    pub row_subtype: Arc<[usize]>,
    pub context_subtype: Arc<[usize]>,
    pub protein_edges: EdgeIndex,
    pub meta_edges: EdgeIndex,
    pub n_cells: usize,
}

impl GraphLayout {
    pub fn new(kg: &KnowledgeGraph) -> Self {
        let mut offsets = vec![0];
        let mut row_protein = Vec::new();
        let mut row_context = Vec::new();
        let mut row_subtype = Vec::new();
        let mut context_subtype = Vec::new();
        let mut stacked_edges = Vec::new();
        for (k, c) in kg.contexts().iter().enumerate() {
            let base = *offsets.last().unwrap();
            let subtype = kg
                .metagraph
                .subtype_index(&c.context_id)
                .expect("knowledge graph validated context subtypes");
            context_subtype.push(subtype);
            row_protein.extend_from_slice(c.proteins());
            row_context.extend(std::iter::repeat_n(k, c.n_nodes()));
            row_subtype.extend(std::iter::repeat_n(subtype, c.n_nodes()));
            stacked_edges.extend(c.edges().iter().map(|&(a, b)| (base + a, base + b)));
            offsets.push(base + c.n_nodes());
        }
        let n_rows = *offsets.last().unwrap();
        let n_cells = kg.metagraph.n_nodes();
        Self {
            offsets,
            row_protein: row_protein.into(),
            row_context: row_context.into(),
            row_subtype: row_subtype.into(),
            context_subtype: context_subtype.into(),
            protein_edges: EdgeIndex::from_undirected(n_rows, &stacked_edges),
            meta_edges: EdgeIndex::from_undirected(n_cells, &kg.metagraph.all_edges()),
            n_cells,
        }
    }

    pub fn n_rows(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn n_contexts(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Stacked row of local node `local` in context `k`.
    pub fn row(&self, k: usize, local: usize) -> usize {
        self.offsets[k] + local
    }
}
