use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use super::{components, ContextGraph, GlobalPpi, KgError, KnowledgeGraph, Metagraph};

pub const DEFAULT_MIN_NODES: usize = 10;
pub const DEFAULT_LR_THRESHOLD: f64 = 0.05;

/// One row of a per-subtype differential expression table.
#[derive(Clone, Debug, PartialEq)]
pub struct DegRecord {
    pub context_id: String,
    pub gene: String,
    /// Average fold change as a ratio.
    pub avg_fc: f64,
    pub adj_p: f64,
    /// Fraction of cells expressing the gene.
    pub pct_expressed: f64,
}

impl DegRecord {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.avg_fc > 0.0 && self.avg_fc.is_finite()) {
            return Err(format!("avg_fc must be positive, got {}", self.avg_fc));
        }
        if !(0.0..=1.0).contains(&self.adj_p) {
            return Err(format!("adj_p must lie in [0,1], got {}", self.adj_p));
        }
        if !(0.0..=1.0).contains(&self.pct_expressed) {
            return Err(format!(
                "pct_expressed must lie in [0,1], got {}",
                self.pct_expressed
            ));
        }
        Ok(())
    }
}

/// One ranked ligand–receptor interaction between two subtypes.
#[derive(Clone, Debug, PartialEq)]
pub struct LrRecord {
    pub source: String,
    pub target: String,
    pub ligand: String,
    pub receptor: String,
    pub aggregate_rank: f64,
}

impl LrRecord {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.aggregate_rank) {
            return Err(format!(
                "aggregate_rank must lie in [0,1], got {}",
                self.aggregate_rank
            ));
        }
        Ok(())
    }
}

/// Activation cutoffs. Fold-change and p-value bounds are inclusive, the
/// expressed-fraction bound is strict.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegThresholds {
    pub up_fc: f64,
    pub down_fc: f64,
    pub max_adj_p: f64,
    pub min_pct_expressed: f64,
}

impl Default for DegThresholds {
    fn default() -> Self {
        Self {
            up_fc: 1.2,
            down_fc: 0.8,
            max_adj_p: 0.05,
            min_pct_expressed: 0.05,
        }
    }
}

impl DegThresholds {
    pub fn passes(&self, r: &DegRecord) -> bool {
        (r.avg_fc >= self.up_fc || r.avg_fc <= self.down_fc)
            && r.adj_p <= self.max_adj_p
            && r.pct_expressed > self.min_pct_expressed
    }
}

/// Activated genes per context. Every context that appears in the table
/// gets an entry, even when no gene passes.
pub fn select_activated_genes(
    deg_table: &[DegRecord],
    thresholds: &DegThresholds,
) -> BTreeMap<String, BTreeSet<String>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in deg_table {
        let set = out.entry(r.context_id.clone()).or_default();
        if thresholds.passes(r) {
            set.insert(r.gene.clone());
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextBuild {
    pub graph: ContextGraph,
    /// Activated genes absent from the global network.
    pub unknown_genes: usize,
}

/// Induces the global network on `activated` and keeps the largest
/// connected component.
pub fn build_context_ppi(
    global: &GlobalPpi,
    context_id: &str,
    activated: &BTreeSet<String>,
    min_nodes: usize,
) -> Result<ContextBuild, KgError> {
    let mut members: Vec<usize> = Vec::with_capacity(activated.len());
    let mut unknown_genes = 0;
    for gene in activated {
        match global.index_of(gene) {
            Some(i) => members.push(i),
            None => unknown_genes += 1,
        }
    }
    members.sort_unstable();
    Ok(ContextBuild {
        graph: induce_largest_component(context_id, &members, global.edges(), min_nodes)?,
        unknown_genes,
    })
}

/// Induces `edges` (global indices) on the sorted global indices `members`
/// and keeps the largest connected component. Ties between equally large
/// components go to the one holding the smallest protein index.
pub fn induce_largest_component(
    context_id: &str,
    members: &[usize],
    edges: &[(usize, usize)],
    min_nodes: usize,
) -> Result<ContextGraph, KgError> {
    if !members.windows(2).all(|w| w[0] < w[1]) {
        return Err(KgError::Invalid(format!(
            "context {context_id}: members must be strictly increasing"
        )));
    }
    let local = |g: usize| members.binary_search(&g).ok();
    let mut adj = vec![Vec::new(); members.len()];
    for &(a, b) in edges {
        if let (Some(la), Some(lb)) = (local(a), local(b)) {
            adj[la].push(lb);
            adj[lb].push(la);
        }
    }

    let labels = components(&adj);
    let n_comp = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; n_comp];
    for &l in &labels {
        sizes[l] += 1;
    }
    // Labels are issued in node order, so the first maximum is the
    // component containing the smallest protein index.
    let best =
        sizes
            .iter()
            .enumerate()
            .fold(None, |acc: Option<(usize, usize)>, (l, &s)| match acc {
                Some((_, bs)) if bs >= s => acc,
                _ => Some((l, s)),
            });
    let size = best.map_or(0, |(_, s)| s);
    if size < min_nodes || size == 0 {
        return Err(KgError::ContextRejected {
            context_id: context_id.to_string(),
            size,
        });
    }
    let keep = best.map(|(l, _)| l).unwrap_or(0);

    let kept: Vec<usize> = (0..members.len()).filter(|&i| labels[i] == keep).collect();
    let proteins: Vec<usize> = kept.iter().map(|&i| members[i]).collect();
    let mut remap = vec![usize::MAX; members.len()];
    for (new, &old) in kept.iter().enumerate() {
        remap[old] = new;
    }
    let mut edges = Vec::new();
    for (u, nbrs) in adj.iter().enumerate() {
        if remap[u] == usize::MAX {
            continue;
        }
        for &v in nbrs {
            if u < v {
                edges.push((remap[u], remap[v]));
            }
        }
    }
    ContextGraph::new(context_id, proteins, edges)
}

/// Undirected subtype pairs supported by at least one interaction ranked at
/// or below `threshold`. Self-pairs are dropped.
pub fn select_lr_edges(lr_table: &[LrRecord], threshold: f64) -> BTreeSet<(String, String)> {
    lr_table
        .iter()
        .filter(|r| r.aggregate_rank <= threshold && r.source != r.target)
        .map(|r| {
            if r.source < r.target {
                (r.source.clone(), r.target.clone())
            } else {
                (r.target.clone(), r.source.clone())
            }
        })
        .collect()
}

/// Builds the metagraph. Subtype nodes are the keys of `hierarchy`, cell
/// types its values; every subtype gets one hierarchy edge to its parent.
pub fn assemble_metagraph(
    subtype_edges: &BTreeSet<(String, String)>,
    hierarchy: &BTreeMap<String, String>,
) -> Result<Metagraph, KgError> {
    let subtypes: Vec<String> = hierarchy.keys().cloned().collect();
    let celltypes: Vec<String> = hierarchy
        .values()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let parent = hierarchy
        .values()
        .map(|c| celltypes.binary_search(c).expect("celltype listed"))
        .collect();
    let idx = |s: &str| subtypes.binary_search_by(|x| x.as_str().cmp(s)).ok();
    let mut edges = BTreeSet::new();
    for (a, b) in subtype_edges {
        let ia = idx(a).ok_or_else(|| KgError::MissingParent(a.clone()))?;
        let ib = idx(b).ok_or_else(|| KgError::MissingParent(b.clone()))?;
        if ia != ib {
            edges.insert((ia.min(ib), ia.max(ib)));
        }
    }
    Ok(Metagraph {
        subtypes,
        celltypes,
        parent,
        subtype_edges: edges.into_iter().collect(),
    })
}

/// `2E / (N (N - 1))` for a simple undirected graph.
pub fn graph_density(n_nodes: usize, n_edges: usize) -> Result<f64, KgError> {
    if n_nodes < 2 {
        return Err(KgError::DegenerateGraph(n_nodes));
    }
    let n = n_nodes as f64;
    Ok(2.0 * n_edges as f64 / (n * (n - 1.0)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstructOptions {
    pub thresholds: DegThresholds,
    pub lr_threshold: f64,
    pub min_nodes: usize,
}

impl Default for ConstructOptions {
    fn default() -> Self {
        Self {
            thresholds: DegThresholds::default(),
            lr_threshold: DEFAULT_LR_THRESHOLD,
            min_nodes: DEFAULT_MIN_NODES,
        }
    }
}

/// Warnings gathered while constructing a knowledge graph.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BuildLog {
    pub unknown_genes: usize,
    /// `(context, largest component size)` of contexts that were too small.
    pub rejected_contexts: Vec<(String, usize)>,
}

/// End-to-end construction: activation, per-context induction, LR edge
/// selection and metagraph assembly. Contexts whose component is too small
/// are skipped and listed in the log.
pub fn construct(
    global: GlobalPpi,
    deg_table: &[DegRecord],
    lr_table: &[LrRecord],
    hierarchy: &BTreeMap<String, String>,
    options: &ConstructOptions,
) -> Result<(KnowledgeGraph, BuildLog), KgError> {
    let activated = select_activated_genes(deg_table, &options.thresholds);
    let results: Vec<(String, Result<ContextBuild, KgError>)> = activated
        .par_iter()
        .map(|(ctx, genes)| {
            (
                ctx.clone(),
                build_context_ppi(&global, ctx, genes, options.min_nodes),
            )
        })
        .collect();

    let mut log = BuildLog::default();
    let mut contexts = Vec::new();
    for (ctx, r) in results {
        match r {
            Ok(b) => {
                log.unknown_genes += b.unknown_genes;
                contexts.push(b.graph);
            }
            Err(KgError::ContextRejected { size, .. }) => log.rejected_contexts.push((ctx, size)),
            Err(e) => return Err(e),
        }
    }
    let metagraph =
        assemble_metagraph(&select_lr_edges(lr_table, options.lr_threshold), hierarchy)?;
    let kg = KnowledgeGraph::new(global, contexts, metagraph)?;
    Ok((kg, log))
}
