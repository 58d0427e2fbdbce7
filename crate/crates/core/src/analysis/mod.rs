//! Embedding similarity analyses, the random-walk baseline, and model
//! comparison.

mod compare;
mod random_walk;
mod similarity;

use thiserror::Error;

pub use compare::{compare_models, win_percentage, ComparisonReport, MetricComparison};
pub use random_walk::{random_walk_embeddings, ProteinEmbeddings, RandomWalkConfig};
pub use similarity::{
    cell_similarity, cosine, leaf_order, marker_contrast, marker_csv, protein_context_similarity,
    similarity_matrix, MarkerScore, SimilarityMatrix,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("zero or non-finite vector")]
    DegenerateVector,
    #[error("gene {gene} is active in {found} context(s); two are needed")]
    InsufficientContexts { gene: String, found: usize },
    #[error("contract violation: {0}")]
    Contract(String),
}
