use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PretrainError;
use crate::kg::{ContextGraph, KnowledgeGraph};

/// Contexts with fewer edges than this keep every edge for training.
pub const MIN_SPLIT_EDGES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), PretrainError> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r))
            || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(PretrainError::Config(format!(
                "split ratios {}/{}/{} must lie in [0, 1] and sum to 1",
                self.train, self.valid, self.test
            )));
        }
        Ok(())
    }

    /// `(train, valid, test)` sizes for `n` edges: valid and test get the
    /// floor of their share, train the remainder.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        if n < MIN_SPLIT_EDGES {
            return (n, 0, 0);
        }
        let share = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
        let valid = share(self.valid);
        let test = share(self.test);
        (n - valid - test, valid, test)
    }
}

/// Held-out partition of one context's edges (local indices, `a < b`).
#[derive(Clone, Debug, PartialEq)]
pub struct ContextSplit {
    pub context_id: String,
    pub train: Vec<(usize, usize)>,
    pub valid: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    pub valid_negatives: Vec<(usize, usize)>,
    pub test_negatives: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSplit {
    pub seed: u64,
    pub contexts: Vec<ContextSplit>,
    /// Contexts too small to split.
    pub unsplit: Vec<String>,
}

impl EdgeSplit {
    /// Train edges per context, in knowledge-graph context order.
    pub fn train_edges(&self) -> Vec<Vec<(usize, usize)>> {
        self.contexts.iter().map(|c| c.train.clone()).collect()
    }
}

/// Generator for context `k` of a run seeded with `seed`.
pub(crate) fn context_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64 + 1);
    rng
}

/// Distinct node pairs of `n_nodes` absent from `forbidden`, uniformly
/// drawn by rejection. Pairs are returned as `(a, b)` with `a < b`.
pub fn sample_non_edges<R: Rng>(
    n_nodes: usize,
    forbidden: &HashSet<(usize, usize)>,
    count: usize,
    rng: &mut R,
) -> Option<Vec<(usize, usize)>> {
    if count == 0 {
        return Some(Vec::new());
    }
    let total_pairs = n_nodes * n_nodes.saturating_sub(1) / 2;
    if total_pairs.saturating_sub(forbidden.len()) < count {
        return None;
    }
    let budget = 1000 + 50 * count;
    let mut taken = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    for _ in 0..budget {
        let a = rng.gen_range(0..n_nodes);
        let b = rng.gen_range(0..n_nodes);
        if a == b {
            continue;
        }
        let pair = (a.min(b), a.max(b));
        if forbidden.contains(&pair) || !taken.insert(pair) {
            continue;
        }
        out.push(pair);
        if out.len() == count {
            return Some(out);
        }
    }
    None
}

/// `ratio · |positives|` negatives for `graph`, avoiding every true edge.
pub fn sample_negatives<R: Rng>(
    graph: &ContextGraph,
    n_positives: usize,
    ratio: f64,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>, PretrainError> {
    let count = (n_positives as f64 * ratio).round() as usize;
    let forbidden: HashSet<(usize, usize)> = graph.edges().iter().copied().collect();
    sample_non_edges(graph.n_nodes(), &forbidden, count, rng).ok_or_else(|| {
        PretrainError::SamplingExhausted {
            context: graph.context_id.clone(),
            requested: count,
        }
    })
}

/// Shuffles one context's edges and carves off validation and test sets,
/// then draws disjoint fixed negatives for both.
pub fn split_context<R: Rng>(
    graph: &ContextGraph,
    ratios: &SplitRatios,
    negative_ratio: f64,
    rng: &mut R,
) -> Result<ContextSplit, PretrainError> {
    ratios.validate()?;
    let mut edges = graph.edges().to_vec();
    edges.shuffle(rng);
    let (_, n_valid, n_test) = ratios.counts(edges.len());
    let test = edges.split_off(edges.len() - n_test);
    let valid = edges.split_off(edges.len() - n_valid);
    let mut train = edges;
    let mut valid = valid;
    let mut test = test;
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();

    let n_valid_neg = (valid.len() as f64 * negative_ratio).round() as usize;
    let n_test_neg = (test.len() as f64 * negative_ratio).round() as usize;
    let forbidden: HashSet<(usize, usize)> = graph.edges().iter().copied().collect();
    let mut negatives =
        sample_non_edges(graph.n_nodes(), &forbidden, n_valid_neg + n_test_neg, rng).ok_or_else(
            || PretrainError::SamplingExhausted {
                context: graph.context_id.clone(),
                requested: n_valid_neg + n_test_neg,
            },
        )?;
    let test_negatives = negatives.split_off(n_valid_neg);
    Ok(ContextSplit {
        context_id: graph.context_id.clone(),
        train,
        valid,
        test,
        valid_negatives: negatives,
        test_negatives,
    })
}

/// Splits every context of `kg` independently; context `k` draws from its
/// own stream of the seeded generator.
pub fn split_edges(
    kg: &KnowledgeGraph,
    ratios: &SplitRatios,
    negative_ratio: f64,
    seed: u64,
) -> Result<EdgeSplit, PretrainError> {
    ratios.validate()?;
    let mut contexts = Vec::with_capacity(kg.contexts().len());
    let mut unsplit = Vec::new();
    for (k, c) in kg.contexts().iter().enumerate() {
        if c.n_edges() < MIN_SPLIT_EDGES {
            unsplit.push(c.context_id.clone());
        }
        contexts.push(split_context(
            c,
            ratios,
            negative_ratio,
            &mut context_rng(seed, k),
        )?);
    }
    Ok(EdgeSplit {
        seed,
        contexts,
        unsplit,
    })
}
