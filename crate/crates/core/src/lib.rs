//! Contextual protein-interaction embeddings.
//!
//! The crate builds a two-level knowledge graph (per-cell-context protein
//! interaction graphs plus a metagraph of cell subtypes and types), learns
//! context-specific protein and cell embeddings in one latent space with an
//! attention GNN pretrained by link prediction, fine-tunes a risk-gene
//! classifier on those embeddings, and provides the embedding analyses and
//! baseline comparison used to inspect the result.

pub mod analysis;
pub mod autodiff;
pub mod finetune;
pub mod kg;
pub mod metrics;
pub mod model;
pub mod pretrain;
