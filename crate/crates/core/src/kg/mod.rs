//! Two-level knowledge graph: a global protein interaction network, one
//! induced interaction graph per cell context, and a metagraph of cell
//! subtypes and their parent cell types.

mod build;
pub mod io;
mod summary;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

pub use build::{
    assemble_metagraph, build_context_ppi, construct, graph_density, induce_largest_component,
    select_activated_genes, select_lr_edges, BuildLog, ConstructOptions, ContextBuild, DegRecord,
    DegThresholds, LrRecord, DEFAULT_LR_THRESHOLD, DEFAULT_MIN_NODES,
};
pub use summary::{summarize, DataSummary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KgError {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: u64,
        message: String,
    },
    #[error("context {context_id} rejected: largest component has {size} nodes")]
    ContextRejected { context_id: String, size: usize },
    #[error("subtype {0} has no parent cell type")]
    MissingParent(String),
    #[error("graph with {0} nodes has no defined density")]
    DegenerateGraph(usize),
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Reference interaction network. Proteins are kept sorted; edges are
/// stored once as `(a, b)` with `a < b`.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalPpi {
    proteins: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<(usize, usize)>,
}

impl GlobalPpi {
    /// Builds the network from named pairs. Self-pairs and repeated pairs
    /// are dropped; the number of dropped self-pairs is returned alongside.
    pub fn from_pairs<I, S>(pairs: I) -> (Self, usize)
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let mut named = BTreeSet::new();
        let mut proteins = BTreeSet::new();
        let mut self_loops = 0;
        for (a, b) in pairs {
            let (a, b) = (a.into(), b.into());
            if a == b {
                self_loops += 1;
                continue;
            }
            proteins.insert(a.clone());
            proteins.insert(b.clone());
            named.insert(if a < b { (a, b) } else { (b, a) });
        }
        let proteins: Vec<String> = proteins.into_iter().collect();
        let index: HashMap<String, usize> = proteins
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        let mut edges: Vec<(usize, usize)> =
            named.iter().map(|(a, b)| (index[a], index[b])).collect();
        edges.sort_unstable();
        (
            Self {
                proteins,
                index,
                edges,
            },
            self_loops,
        )
    }

    pub fn proteins(&self) -> &[String] {
        &self.proteins
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_proteins(&self) -> usize {
        self.proteins.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn index_of(&self, protein: &str) -> Option<usize> {
        self.index.get(protein).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.proteins[i]
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.proteins.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }
}

/// Interaction graph of one cell context, induced on its activated
/// proteins. Node `k` is global protein `proteins[k]`; `proteins` is sorted
/// so the local index is a binary search away.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextGraph {
    pub context_id: String,
    proteins: Vec<usize>,
    edges: Vec<(usize, usize)>,
}

impl ContextGraph {
    /// `proteins` are global indices; `edges` are local `(a, b)` pairs.
    pub fn new(
        context_id: impl Into<String>,
        proteins: Vec<usize>,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self, KgError> {
        let context_id = context_id.into();
        let n = proteins.len();
        if !proteins.windows(2).all(|w| w[0] < w[1]) {
            return Err(KgError::Invalid(format!(
                "context {context_id}: protein list must be strictly increasing"
            )));
        }
        let mut set = BTreeSet::new();
        for &(a, b) in &edges {
            if a == b || a >= n || b >= n {
                return Err(KgError::Invalid(format!(
                    "context {context_id}: bad edge ({a}, {b}) for {n} nodes"
                )));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Self {
            context_id,
            proteins,
            edges: set.into_iter().collect(),
        })
    }

    pub fn proteins(&self) -> &[usize] {
        &self.proteins
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_nodes(&self) -> usize {
        self.proteins.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn local_of(&self, global: usize) -> Option<usize> {
        self.proteins.binary_search(&global).ok()
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.proteins.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        if self.proteins.is_empty() {
            return true;
        }
        components(&self.adjacency()).iter().all(|&c| c == 0)
    }

    pub fn edge_set(&self) -> BTreeSet<(usize, usize)> {
        self.edges.iter().copied().collect()
    }

    /// Copy with the same nodes and a replacement edge list.
    pub fn with_edges(&self, edges: Vec<(usize, usize)>) -> Result<Self, KgError> {
        Self::new(self.context_id.clone(), self.proteins.clone(), edges)
    }
}

/// Component label of every node (labels assigned in order of first node).
pub(crate) fn components(adj: &[Vec<usize>]) -> Vec<usize> {
    let mut label = vec![usize::MAX; adj.len()];
    let mut next = 0;
    let mut queue = std::collections::VecDeque::new();
    for start in 0..adj.len() {
        if label[start] != usize::MAX {
            continue;
        }
        label[start] = next;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if label[v] == usize::MAX {
                    label[v] = next;
                    queue.push_back(v);
                }
            }
        }
        next += 1;
    }
    label
}

/// Cell subtypes, their parent cell types, and communication edges.
///
/// Node numbering used by the model: subtypes `0..S` followed by cell
/// types `S..S+C`, both in sorted name order.
#[derive(Clone, Debug, PartialEq)]
pub struct Metagraph {
    subtypes: Vec<String>,
    celltypes: Vec<String>,
    parent: Vec<usize>,
    subtype_edges: Vec<(usize, usize)>,
}

impl Metagraph {
    pub fn subtypes(&self) -> &[String] {
        &self.subtypes
    }

    pub fn celltypes(&self) -> &[String] {
        &self.celltypes
    }

    pub fn n_nodes(&self) -> usize {
        self.subtypes.len() + self.celltypes.len()
    }

    pub fn subtype_index(&self, subtype: &str) -> Option<usize> {
        self.subtypes
            .binary_search_by(|s| s.as_str().cmp(subtype))
            .ok()
    }

    pub fn parent_of(&self, subtype: usize) -> usize {
        self.parent[subtype]
    }

    /// Subtype pairs `(a, b)`, `a < b`, as subtype indices.
    pub fn subtype_edges(&self) -> &[(usize, usize)] {
        &self.subtype_edges
    }

    /// `(subtype, celltype)` hierarchy pairs in model node numbering.
    pub fn hierarchy_edges(&self) -> Vec<(usize, usize)> {
        let s = self.subtypes.len();
        self.parent
            .iter()
            .enumerate()
            .map(|(i, &p)| (i, s + p))
            .collect()
    }

    /// Every undirected edge (subtype–subtype and subtype–celltype) in model
    /// node numbering.
    pub fn all_edges(&self) -> Vec<(usize, usize)> {
        let mut e = self.subtype_edges.clone();
        e.extend(self.hierarchy_edges());
        e
    }

    pub fn node_names(&self) -> Vec<String> {
        self.subtypes
            .iter()
            .chain(self.celltypes.iter())
            .cloned()
            .collect()
    }

    pub fn node_name(&self, node: usize) -> &str {
        let s = self.subtypes.len();
        if node < s {
            &self.subtypes[node]
        } else {
            &self.celltypes[node - s]
        }
    }

    pub fn hierarchy(&self) -> BTreeMap<String, String> {
        self.subtypes
            .iter()
            .zip(&self.parent)
            .map(|(s, &p)| (s.clone(), self.celltypes[p].clone()))
            .collect()
    }
}

/// The full training substrate.
#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeGraph {
    pub global: GlobalPpi,
    contexts: Vec<ContextGraph>,
    pub metagraph: Metagraph,
}

impl KnowledgeGraph {
    pub fn new(
        global: GlobalPpi,
        mut contexts: Vec<ContextGraph>,
        metagraph: Metagraph,
    ) -> Result<Self, KgError> {
        contexts.sort_by(|a, b| a.context_id.cmp(&b.context_id));
        for w in contexts.windows(2) {
            if w[0].context_id == w[1].context_id {
                return Err(KgError::Invalid(format!(
                    "duplicate context {}",
                    w[0].context_id
                )));
            }
        }
        for c in &contexts {
            if metagraph.subtype_index(&c.context_id).is_none() {
                return Err(KgError::MissingParent(c.context_id.clone()));
            }
            if let Some(&p) = c.proteins().last() {
                if p >= global.n_proteins() {
                    return Err(KgError::Invalid(format!(
                        "context {} references protein {p} outside the global network",
                        c.context_id
                    )));
                }
            }
        }
        Ok(Self {
            global,
            contexts,
            metagraph,
        })
    }

    /// Contexts sorted by id.
    pub fn contexts(&self) -> &[ContextGraph] {
        &self.contexts
    }

    pub fn context(&self, id: &str) -> Option<&ContextGraph> {
        self.contexts
            .binary_search_by(|c| c.context_id.as_str().cmp(id))
            .ok()
            .map(|i| &self.contexts[i])
    }

    /// Same graph with each context's edges replaced (same order as
    /// [`contexts`](Self::contexts)).
    pub fn with_context_edges(&self, edges: Vec<Vec<(usize, usize)>>) -> Result<Self, KgError> {
        if edges.len() != self.contexts.len() {
            return Err(KgError::Invalid(format!(
                "{} edge lists for {} contexts",
                edges.len(),
                self.contexts.len()
            )));
        }
        let contexts = self
            .contexts
            .iter()
            .zip(edges)
            .map(|(c, e)| c.with_edges(e))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            global: self.global.clone(),
            contexts,
            metagraph: self.metagraph.clone(),
        })
    }

    pub fn total_protein_representations(&self) -> usize {
        self.contexts.iter().map(ContextGraph::n_nodes).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn global_from_pairs_dedupes_and_drops_self_loops() {
        let (g, loops) = GlobalPpi::from_pairs([("b", "a"), ("a", "b"), ("c", "c"), ("a", "c")]);
        assert_eq!(loops, 1);
        assert_eq!(g.proteins(), &["a", "b", "c"]);
        assert_eq!(g.edges(), &[(0, 1), (0, 2)]);
    }

    #[test]
    fn context_requires_sorted_proteins() {
        assert!(ContextGraph::new("c", vec![2, 1], vec![]).is_err());
        assert!(ContextGraph::new("c", vec![1, 2], vec![(0, 0)]).is_err());
        let c = ContextGraph::new("c", vec![1, 2, 5], vec![(1, 0), (0, 1), (2, 1)]).unwrap();
        assert_eq!(c.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(c.local_of(5), Some(2));
        assert!(c.is_connected());
    }
}
