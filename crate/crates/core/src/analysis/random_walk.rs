use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::kg::{GlobalPpi, KnowledgeGraph};
use crate::model::EmbeddingTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomWalkConfig {
    pub dim: usize,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub window: usize,
    pub power_iterations: usize,
    pub oversample: usize,
    pub seed: u64,
}

impl Default for RandomWalkConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            walks_per_node: 10,
            walk_length: 20,
            window: 5,
            power_iterations: 6,
            oversample: 10,
            seed: 0,
        }
    }
}

/// Context-free embeddings: one row per global protein, in global order.
#[derive(Clone, Debug, PartialEq)]
pub struct ProteinEmbeddings {
    pub names: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl ProteinEmbeddings {
    /// Copies each protein's vector into every context where it is active.
    pub fn replicate(&self, kg: &KnowledgeGraph) -> Result<EmbeddingTable, AnalysisError> {
        let index: BTreeMap<&str, usize> = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let mut entries: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
        for c in kg.contexts() {
            let ctx = entries.entry(c.context_id.clone()).or_default();
            for &p in c.proteins() {
                let name = kg.global.name(p);
                let i = index.get(name).ok_or_else(|| {
                    AnalysisError::Contract(format!("no random-walk embedding for {name}"))
                })?;
                ctx.insert(name.to_string(), self.vectors[*i].clone());
            }
        }
        EmbeddingTable::from_parts(entries, BTreeMap::new())
            .map_err(|e| AnalysisError::Contract(e.to_string()))
    }
}

/// Uniform random walks from every protein, positive PMI of windowed
/// co-occurrences, and a rank-`dim` eigen-factorisation by seeded
/// randomized subspace iteration (`U |Λ|^{1/2}`).
///
/// Walks never leave a connected component, so the PPMI matrix is block
/// diagonal and components end up in orthogonal subspaces.
pub fn random_walk_embeddings(
    global: &GlobalPpi,
    config: &RandomWalkConfig,
) -> Result<ProteinEmbeddings, AnalysisError> {
    let n = global.n_proteins();
    if config.dim == 0 || config.dim > n {
        return Err(AnalysisError::Contract(format!(
            "embedding dimension {} for {n} proteins",
            config.dim
        )));
    }
    let adj = global.adjacency();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let m = ppmi(&adj, config, &mut rng);
    let emb = factorize(&m, n, config, &mut rng);
    let vectors = (0..n)
        .map(|i| emb.row(i).iter().copied().collect())
        .collect();
    Ok(ProteinEmbeddings {
        names: global.proteins().to_vec(),
        vectors,
    })
}

/// Symmetric sparse matrix in compressed rows.
struct Csr {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    fn mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::<f64>::zeros(self.offsets.len() - 1, x.ncols());
        for i in 0..self.offsets.len() - 1 {
            for k in self.offsets[i]..self.offsets[i + 1] {
                let (j, v) = (self.cols[k], self.values[k]);
                for c in 0..x.ncols() {
                    out[(i, c)] += v * x[(j, c)];
                }
            }
        }
        out
    }
}

fn ppmi(adj: &[Vec<usize>], config: &RandomWalkConfig, rng: &mut ChaCha8Rng) -> Csr {
    let n = adj.len();
    let mut counts: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    let mut walk = Vec::with_capacity(config.walk_length);
    for _ in 0..config.walks_per_node {
        for start in 0..n {
            walk.clear();
            walk.push(start);
            while walk.len() < config.walk_length {
                let nbrs = &adj[*walk.last().unwrap()];
                if nbrs.is_empty() {
                    break;
                }
                walk.push(nbrs[rng.gen_range(0..nbrs.len())]);
            }
            for (i, &u) in walk.iter().enumerate() {
                for &v in walk.iter().skip(i + 1).take(config.window) {
                    *counts[u].entry(v).or_default() += 1.0;
                    *counts[v].entry(u).or_default() += 1.0;
                }
            }
        }
    }
    let rows: Vec<f64> = counts.iter().map(|r| r.values().sum()).collect();
    let total: f64 = rows.iter().sum();
    let mut csr = Csr {
        offsets: vec![0],
        cols: Vec::new(),
        values: Vec::new(),
    };
    for (i, row) in counts.iter().enumerate() {
        for (&j, &c) in row {
            let v = (c * total / (rows[i] * rows[j])).ln();
            if v > 0.0 {
                csr.cols.push(j);
                csr.values.push(v);
            }
        }
        csr.offsets.push(csr.cols.len());
    }
    csr
}

fn factorize(m: &Csr, n: usize, config: &RandomWalkConfig, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let k = config.dim;
    let l = (k + config.oversample).min(n);
    let omega = DMatrix::from_fn(n, l, |_, _| rng.gen_range(-1.0..1.0));
    let mut q = m.mul(&omega).qr().q();
    for _ in 0..config.power_iterations {
        q = m.mul(&q).qr().q();
    }
    let b = q.transpose() * m.mul(&q);
    let b = (&b + b.transpose()) * 0.5;
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&x, &y| {
        eig.eigenvalues[y]
            .abs()
            .total_cmp(&eig.eigenvalues[x].abs())
            .then(x.cmp(&y))
    });
    let mut out = DMatrix::<f64>::zeros(n, k);
    for (col, &e) in order.iter().take(k).enumerate() {
        let u = &q * eig.eigenvectors.column(e);
        // Sign convention: largest-magnitude entry positive.
        let pivot = u
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        let scale = eig.eigenvalues[e].abs().sqrt() * sign;
        for i in 0..n {
            out[(i, col)] = u[i] * scale;
        }
    }
    out
}
