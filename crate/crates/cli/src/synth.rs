//! Planted stochastic-block benchmark.
//!
//! Every context draws its own block-model graph over a shared protein
//! universe with one shared block assignment; block `risk_block` supplies
//! the positive risk labels.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use anyhow::Context as _;
use ctxppi_core::kg::io::write_bundle;
use ctxppi_core::kg::{
    assemble_metagraph, induce_largest_component, GlobalPpi, KnowledgeGraph, DEFAULT_MIN_NODES,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("infeasible synthetic spec: {0}")]
pub struct SpecError(pub String);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_proteins: usize,
    pub n_contexts: usize,
    pub n_blocks: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    pub risk_block: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    pub n_celltypes: usize,
    /// Probability that a protein is active in a given context.
    pub active_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_proteins: 500,
            n_contexts: 8,
            n_blocks: 4,
            p_intra: 0.15,
            p_inter: 0.01,
            risk_block: 0,
            n_positive: 40,
            n_negative: 60,
            n_celltypes: 2,
            active_fraction: 0.8,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        let err = |m: String| Err(SpecError(m));
        for (name, p) in [
            ("p_intra", self.p_intra),
            ("p_inter", self.p_inter),
            ("active_fraction", self.active_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return err(format!("{name} = {p} is not a probability"));
            }
        }
        if self.p_intra < self.p_inter {
            return err(format!(
                "p_intra {} below p_inter {}",
                self.p_intra, self.p_inter
            ));
        }
        if self.n_blocks == 0 || self.n_blocks > self.n_proteins {
            return err(format!(
                "{} blocks for {} proteins",
                self.n_blocks, self.n_proteins
            ));
        }
        if self.n_contexts == 0 || self.n_celltypes == 0 || self.n_celltypes > self.n_contexts {
            return err(format!(
                "{} contexts with {} cell types",
                self.n_contexts, self.n_celltypes
            ));
        }
        if self.risk_block >= self.n_blocks {
            return err(format!("risk block {} out of range", self.risk_block));
        }
        let block = self.block_size(self.risk_block);
        if self.n_positive == 0 || self.n_positive > block {
            return err(format!(
                "{} positives from a block of {block}",
                self.n_positive
            ));
        }
        if self.n_negative == 0 || self.n_negative > self.n_proteins - block {
            return err(format!(
                "{} negatives from {} non-block proteins",
                self.n_negative,
                self.n_proteins - block
            ));
        }
        Ok(())
    }

    /// Proteins are dealt to blocks round-robin.
    pub fn block_of(&self, protein: usize) -> usize {
        protein % self.n_blocks
    }

    pub fn block_size(&self, block: usize) -> usize {
        (self.n_proteins + self.n_blocks - 1 - block) / self.n_blocks
    }
}

pub fn protein_name(i: usize) -> String {
    format!("G{i:04}")
}

pub fn context_name(k: usize) -> String {
    format!("S{k:02}")
}

pub fn celltype_name(c: usize) -> String {
    format!("T{c}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub spec: SyntheticSpec,
    pub blocks: BTreeMap<String, usize>,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct SynthBundle {
    pub kg: KnowledgeGraph,
    pub truth: GroundTruth,
}

pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<SynthBundle, SpecError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n_proteins;

    let mut active: Vec<Vec<usize>> = Vec::with_capacity(spec.n_contexts);
    let mut context_edges: Vec<Vec<(usize, usize)>> = Vec::with_capacity(spec.n_contexts);
    for _ in 0..spec.n_contexts {
        let members: Vec<usize> = (0..n)
            .filter(|_| rng.gen_bool(spec.active_fraction))
            .collect();
        let mut edges = Vec::new();
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                let p = if spec.block_of(a) == spec.block_of(b) {
                    spec.p_intra
                } else {
                    spec.p_inter
                };
                if rng.gen_bool(p) {
                    edges.push((a, b));
                }
            }
        }
        active.push(members);
        context_edges.push(edges);
    }

    let pairs: BTreeSet<(usize, usize)> = context_edges.iter().flatten().copied().collect();
    let (global, _) = GlobalPpi::from_pairs(
        pairs
            .iter()
            .map(|&(a, b)| (protein_name(a), protein_name(b))),
    );
    let to_global = |p: usize| global.index_of(&protein_name(p));

    let mut contexts = Vec::with_capacity(spec.n_contexts);
    for (k, (members, edges)) in active.iter().zip(&context_edges).enumerate() {
        let mut m: Vec<usize> = members.iter().filter_map(|&p| to_global(p)).collect();
        m.sort_unstable();
        let e: Vec<(usize, usize)> = edges
            .iter()
            .map(|&(a, b)| (to_global(a).unwrap(), to_global(b).unwrap()))
            .collect();
        let graph = induce_largest_component(&context_name(k), &m, &e, DEFAULT_MIN_NODES)
            .map_err(|e| SpecError(e.to_string()))?;
        contexts.push(graph);
    }

    let hierarchy: BTreeMap<String, String> = (0..spec.n_contexts)
        .map(|k| (context_name(k), celltype_name(k % spec.n_celltypes)))
        .collect();
    // Communication ring over the subtypes.
    let lr: BTreeSet<(String, String)> = (0..spec.n_contexts)
        .map(|k| (context_name(k), context_name((k + 1) % spec.n_contexts)))
        .collect();
    let metagraph = assemble_metagraph(&lr, &hierarchy).map_err(|e| SpecError(e.to_string()))?;
    let kg =
        KnowledgeGraph::new(global, contexts, metagraph).map_err(|e| SpecError(e.to_string()))?;

    let mut in_block: Vec<usize> = (0..n)
        .filter(|&p| spec.block_of(p) == spec.risk_block)
        .collect();
    let mut outside: Vec<usize> = (0..n)
        .filter(|&p| spec.block_of(p) != spec.risk_block)
        .collect();
    in_block.shuffle(&mut rng);
    outside.shuffle(&mut rng);
    let mut positives: Vec<String> = in_block[..spec.n_positive]
        .iter()
        .map(|&p| protein_name(p))
        .collect();
    let mut negatives: Vec<String> = outside[..spec.n_negative]
        .iter()
        .map(|&p| protein_name(p))
        .collect();
    positives.sort();
    negatives.sort();

    let truth = GroundTruth {
        seed,
        spec: spec.clone(),
        blocks: (0..n)
            .map(|p| (protein_name(p), spec.block_of(p)))
            .collect(),
        positives,
        negatives,
    };
    Ok(SynthBundle { kg, truth })
}

/// `gene<TAB>label` with a header row.
pub fn labels_tsv(truth: &GroundTruth) -> String {
    let mut rows: Vec<(&str, u8)> = truth
        .positives
        .iter()
        .map(|g| (g.as_str(), 1))
        .chain(truth.negatives.iter().map(|g| (g.as_str(), 0)))
        .collect();
    rows.sort();
    let mut s = String::from("gene\tlabel\n");
    for (g, l) in rows {
        s.push_str(&format!("{g}\t{l}\n"));
    }
    s
}

/// Writes the graph bundle, one edge file per context, the labels, and the
/// ground truth under `dir`.
pub fn write(dir: &Path, bundle: &SynthBundle) -> anyhow::Result<()> {
    write_bundle(dir, &bundle.kg)?;
    let cdir = dir.join("contexts");
    fs::create_dir_all(&cdir).with_context(|| format!("creating {}", cdir.display()))?;
    for c in bundle.kg.contexts() {
        let mut s = String::from("protein_a\tprotein_b\n");
        for &(a, b) in c.edges() {
            let ga = bundle.kg.global.name(c.proteins()[a]);
            let gb = bundle.kg.global.name(c.proteins()[b]);
            s.push_str(&format!("{ga}\t{gb}\n"));
        }
        fs::write(cdir.join(format!("{}.tsv", c.context_id)), s)?;
    }
    fs::write(dir.join("labels.tsv"), labels_tsv(&bundle.truth))?;
    fs::write(
        dir.join("truth.json"),
        serde_json::to_string_pretty(&bundle.truth)? + "\n",
    )?;
    Ok(())
}
