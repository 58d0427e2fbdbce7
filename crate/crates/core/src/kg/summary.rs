use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{graph_density, KnowledgeGraph};

/// Size and density bookkeeping for a constructed knowledge graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub n_proteins: usize,
    pub n_edges: usize,
    pub global_density: Option<f64>,
    pub n_subtypes: usize,
    pub n_celltypes: usize,
    pub n_contexts: usize,
    pub n_unique_proteins_in_contexts: usize,
    /// Sum of activated protein counts over contexts.
    pub total_protein_representations: usize,
    /// `[min, max]` density over contexts with at least two nodes.
    pub context_density_range: Option<[f64; 2]>,
}

pub fn summarize(kg: &KnowledgeGraph) -> DataSummary {
    let unique: BTreeSet<usize> = kg
        .contexts()
        .iter()
        .flat_map(|c| c.proteins().iter().copied())
        .collect();
    let densities: Vec<f64> = kg
        .contexts()
        .iter()
        .filter_map(|c| graph_density(c.n_nodes(), c.n_edges()).ok())
        .collect();
    let context_density_range = if densities.is_empty() {
        None
    } else {
        Some([
            densities.iter().copied().fold(f64::INFINITY, f64::min),
            densities.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ])
    };
    DataSummary {
        n_proteins: kg.global.n_proteins(),
        n_edges: kg.global.n_edges(),
        global_density: graph_density(kg.global.n_proteins(), kg.global.n_edges()).ok(),
        n_subtypes: kg.metagraph.subtypes().len(),
        n_celltypes: kg.metagraph.celltypes().len(),
        n_contexts: kg.contexts().len(),
        n_unique_proteins_in_contexts: unique.len(),
        total_protein_representations: kg.total_protein_representations(),
        context_density_range,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::kg::{assemble_metagraph, ContextGraph, GlobalPpi};

    fn path_graph(n: usize) -> GlobalPpi {
        let names: Vec<String> = (0..n).map(|i| format!("p{i:03}")).collect();
        GlobalPpi::from_pairs((1..n).map(|i| (names[i - 1].clone(), names[i].clone()))).0
    }

    fn metagraph(ids: &[&str]) -> crate::kg::Metagraph {
        let h: BTreeMap<String, String> = ids
            .iter()
            .map(|s| (s.to_string(), "parent".to_string()))
            .collect();
        assemble_metagraph(&Default::default(), &h).unwrap()
    }

    #[test]
    fn single_full_context_counts_every_protein_once() {
        let g = path_graph(12);
        let ctx = ContextGraph::new("c", (0..12).collect(), g.edges().to_vec()).unwrap();
        let kg = KnowledgeGraph::new(g, vec![ctx], metagraph(&["c"])).unwrap();
        let s = summarize(&kg);
        assert_eq!(s.total_protein_representations, s.n_proteins);
        assert_eq!(s.n_unique_proteins_in_contexts, 12);
        assert_eq!(s.n_subtypes, 1);
        assert_eq!(s.n_celltypes, 1);
    }

    #[test]
    fn representations_sum_over_contexts() {
        let g = path_graph(25);
        let a = ContextGraph::new(
            "a",
            (0..10).collect(),
            (1..10).map(|i| (i - 1, i)).collect(),
        )
        .unwrap();
        let b = ContextGraph::new(
            "b",
            (5..25).collect(),
            (1..20).map(|i| (i - 1, i)).collect(),
        )
        .unwrap();
        let kg = KnowledgeGraph::new(g, vec![b, a], metagraph(&["a", "b"])).unwrap();
        let s = summarize(&kg);
        assert_eq!(s.total_protein_representations, 30);
        assert_eq!(s.n_unique_proteins_in_contexts, 25);
        let [lo, hi] = s.context_density_range.unwrap();
        assert!((lo - 2.0 / 20.0).abs() < 1e-15);
        assert!((hi - 2.0 / 10.0).abs() < 1e-15);
    }
}
