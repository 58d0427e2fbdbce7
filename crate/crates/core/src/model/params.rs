use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelError;
use crate::autodiff::{xavier_limit, Matrix, Tape, Var};
use crate::kg::KnowledgeGraph;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub n_protein_layers: usize,
    pub n_attention_heads: usize,
    pub n_metagraph_layers: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            n_protein_layers: 2,
            n_attention_heads: 2,
            n_metagraph_layers: 1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let counts = [
            ("latent_dim", self.latent_dim),
            ("n_protein_layers", self.n_protein_layers),
            ("n_attention_heads", self.n_attention_heads),
            ("n_metagraph_layers", self.n_metagraph_layers),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be at least 1")));
        }
        if !self.latent_dim.is_multiple_of(self.n_attention_heads) {
            return Err(ModelError::Config(format!(
                "latent_dim {} is not divisible by {} heads",
                self.latent_dim, self.n_attention_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.latent_dim / self.n_attention_heads
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHead {
    /// `in x head_dim` projection.
    pub weight: Matrix,
    /// Scores the receiving node (`head_dim x 1`).
    pub att_dst: Matrix,
    /// Scores the sending node (`head_dim x 1`).
    pub att_src: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionLayer {
    pub heads: Vec<AttentionHead>,
}

impl AttentionLayer {
    pub fn init<R: Rng>(in_dim: usize, n_heads: usize, head_dim: usize, rng: &mut R) -> Self {
        let heads = (0..n_heads)
            .map(|_| AttentionHead {
                weight: Matrix::xavier_uniform(in_dim, head_dim, rng),
                att_dst: Matrix::xavier_uniform(head_dim, 1, rng),
                att_src: Matrix::xavier_uniform(head_dim, 1, rng),
            })
            .collect();
        Self { heads }
    }

    pub fn out_dim(&self) -> usize {
        self.heads.iter().map(|h| h.weight.cols()).sum()
    }
}

/// Every learnable matrix of the contextual GNN.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Free input embedding per global protein.
    pub protein_features: Matrix,
    /// Free input embedding per metagraph node.
    pub cell_features: Matrix,
    /// Shared across contexts. All but the last run before the bridge.
    pub protein_layers: Vec<AttentionLayer>,
    pub bridge_score: Matrix,
    pub bridge_weight: Matrix,
    pub metagraph_layers: Vec<AttentionLayer>,
    /// Projects `[protein | subtype]` (`2d x d`).
    pub broadcast_weight: Matrix,
    pub broadcast_bias: Matrix,
}

fn uniform<R: Rng>(rows: usize, cols: usize, limit: f64, rng: &mut R) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..=limit))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

/// Seeded initialisation. Weights are Xavier-uniform; input embeddings are
/// uniform with the limit of a square `d x d` Xavier matrix so each row has
/// roughly unit norm.
pub fn init_params(config: &ModelConfig, kg: &KnowledgeGraph) -> Result<ModelParams, ModelError> {
    init_params_sized(config, kg.global.n_proteins(), kg.metagraph.n_nodes())
}

pub fn init_params_sized(
    config: &ModelConfig,
    n_proteins: usize,
    n_cells: usize,
) -> Result<ModelParams, ModelError> {
    config.validate()?;
    let d = config.latent_dim;
    let heads = config.n_attention_heads;
    let hd = config.head_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let emb_limit = xavier_limit(d, d);
    let protein_features = uniform(n_proteins, d, emb_limit, &mut rng);
    let cell_features = uniform(n_cells, d, emb_limit, &mut rng);
    let protein_layers = (0..config.n_protein_layers)
        .map(|_| AttentionLayer::init(d, heads, hd, &mut rng))
        .collect();
    let bridge_score = Matrix::xavier_uniform(d, 1, &mut rng);
    let bridge_weight = Matrix::xavier_uniform(d, d, &mut rng);
    let metagraph_layers = (0..config.n_metagraph_layers)
        .map(|_| AttentionLayer::init(d, heads, hd, &mut rng))
        .collect();
    let broadcast_weight = Matrix::xavier_uniform(2 * d, d, &mut rng);
    let broadcast_bias = Matrix::zeros(1, d);
    Ok(ModelParams {
        protein_features,
        cell_features,
        protein_layers,
        bridge_score,
        bridge_weight,
        metagraph_layers,
        broadcast_weight,
        broadcast_bias,
    })
}

impl ModelParams {
    /// Named tensors in canonical order (the order used by checkpoints and
    /// the optimizer).
    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> = vec![
            ("protein_features".into(), &self.protein_features),
            ("cell_features".into(), &self.cell_features),
        ];
        push_layers(&mut out, "protein_layer", &self.protein_layers);
        out.push(("bridge_score".into(), &self.bridge_score));
        out.push(("bridge_weight".into(), &self.bridge_weight));
        push_layers(&mut out, "metagraph_layer", &self.metagraph_layers);
        out.push(("broadcast_weight".into(), &self.broadcast_weight));
        out.push(("broadcast_bias".into(), &self.broadcast_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = vec![&mut self.protein_features, &mut self.cell_features];
        for l in &mut self.protein_layers {
            for h in &mut l.heads {
                out.extend([&mut h.weight, &mut h.att_dst, &mut h.att_src]);
            }
        }
        out.push(&mut self.bridge_score);
        out.push(&mut self.bridge_weight);
        for l in &mut self.metagraph_layers {
            for h in &mut l.heads {
                out.extend([&mut h.weight, &mut h.att_dst, &mut h.att_src]);
            }
        }
        out.push(&mut self.broadcast_weight);
        out.push(&mut self.broadcast_bias);
        out
    }

    /// Overwrites every tensor from `values` (canonical order); names and
    /// shapes must match.
    pub fn load_tensors(&mut self, values: Vec<(String, Matrix)>) -> Result<(), ModelError> {
        let expected: Vec<(String, (usize, usize))> = self
            .named_tensors()
            .into_iter()
            .map(|(n, m)| (n, m.shape()))
            .collect();
        if expected.len() != values.len() {
            return Err(ModelError::Mismatch(format!(
                "expected {} tensors, got {}",
                expected.len(),
                values.len()
            )));
        }
        for ((en, es), (vn, vm)) in expected.iter().zip(&values) {
            if en != vn || *es != vm.shape() {
                return Err(ModelError::Mismatch(format!(
                    "tensor {vn} {:?} does not match expected {en} {es:?}",
                    vm.shape()
                )));
            }
        }
        for (slot, (_, m)) in self.tensors_mut().into_iter().zip(values) {
            *slot = m;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, m)| m.is_finite())
    }
}

fn push_layers<'a>(
    out: &mut Vec<(String, &'a Matrix)>,
    prefix: &str,
    layers: &'a [AttentionLayer],
) {
    for (l, layer) in layers.iter().enumerate() {
        for (h, head) in layer.heads.iter().enumerate() {
            out.push((format!("{prefix}{l}.head{h}.weight"), &head.weight));
            out.push((format!("{prefix}{l}.head{h}.att_dst"), &head.att_dst));
            out.push((format!("{prefix}{l}.head{h}.att_src"), &head.att_src));
        }
    }
}

#[derive(Clone, Debug)]
pub struct HeadVars {
    pub weight: Var,
    pub att_dst: Var,
    pub att_src: Var,
}

/// Tape handles mirroring [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub protein_features: Var,
    pub cell_features: Var,
    pub protein_layers: Vec<Vec<HeadVars>>,
    pub bridge_score: Var,
    pub bridge_weight: Var,
    pub metagraph_layers: Vec<Vec<HeadVars>>,
    pub broadcast_weight: Var,
    pub broadcast_bias: Var,
}

impl ParamVars {
    /// Registers every tensor as a trainable leaf, in canonical order.
    pub fn register(tape: &mut Tape, p: &ModelParams) -> Self {
        let protein_features = tape.param(p.protein_features.clone());
        let cell_features = tape.param(p.cell_features.clone());
        let layers = |tape: &mut Tape, ls: &[AttentionLayer]| -> Vec<Vec<HeadVars>> {
            ls.iter()
                .map(|l| {
                    l.heads
                        .iter()
                        .map(|h| HeadVars {
                            weight: tape.param(h.weight.clone()),
                            att_dst: tape.param(h.att_dst.clone()),
                            att_src: tape.param(h.att_src.clone()),
                        })
                        .collect()
                })
                .collect()
        };
        let protein_layers = layers(tape, &p.protein_layers);
        let bridge_score = tape.param(p.bridge_score.clone());
        let bridge_weight = tape.param(p.bridge_weight.clone());
        let metagraph_layers = layers(tape, &p.metagraph_layers);
        let broadcast_weight = tape.param(p.broadcast_weight.clone());
        let broadcast_bias = tape.param(p.broadcast_bias.clone());
        Self {
            protein_features,
            cell_features,
            protein_layers,
            bridge_score,
            bridge_weight,
            metagraph_layers,
            broadcast_weight,
            broadcast_bias,
        }
    }

    /// Mutable handles in canonical order.
    pub fn vars_mut(&mut self) -> Vec<&mut Var> {
        let mut out = vec![&mut self.protein_features, &mut self.cell_features];
        for l in &mut self.protein_layers {
            for h in l {
                out.extend([&mut h.weight, &mut h.att_dst, &mut h.att_src]);
            }
        }
        out.push(&mut self.bridge_score);
        out.push(&mut self.bridge_weight);
        for l in &mut self.metagraph_layers {
            for h in l {
                out.extend([&mut h.weight, &mut h.att_dst, &mut h.att_src]);
            }
        }
        out.push(&mut self.broadcast_weight);
        out.push(&mut self.broadcast_bias);
        out
    }

    /// Handles in canonical order.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.protein_features, self.cell_features];
        for l in &self.protein_layers {
            for h in l {
                out.extend([h.weight, h.att_dst, h.att_src]);
            }
        }
        out.push(self.bridge_score);
        out.push(self.bridge_weight);
        for l in &self.metagraph_layers {
            for h in l {
                out.extend([h.weight, h.att_dst, h.att_src]);
            }
        }
        out.push(self.broadcast_weight);
        out.push(self.broadcast_bias);
        out
    }
}
