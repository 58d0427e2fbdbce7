//! Risk-gene classification head on frozen context-specific embeddings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Read;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{sigmoid, AdamConfig, AdamState, AutodiffError, Matrix, Tape, Var};
use crate::metrics::{ranking_metrics, RankingMetrics};
use crate::model::EmbeddingTable;

#[derive(Debug, Error)]
pub enum FinetuneError {
    #[error("no labelled gene has an embedding")]
    EmptyDataset,
    #[error("gene {0} has no embedding")]
    GeneNotFound(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Disjoint, nonempty positive and negative gene sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskLabelSet {
    positives: BTreeSet<String>,
    negatives: BTreeSet<String>,
}

impl RiskLabelSet {
    pub fn new(
        positives: impl IntoIterator<Item = String>,
        negatives: impl IntoIterator<Item = String>,
    ) -> Result<Self, FinetuneError> {
        let positives: BTreeSet<String> = positives.into_iter().collect();
        let negatives: BTreeSet<String> = negatives.into_iter().collect();
        if positives.is_empty() || negatives.is_empty() {
            return Err(FinetuneError::Contract(
                "label set needs at least one positive and one negative".into(),
            ));
        }
        if let Some(g) = positives.intersection(&negatives).next() {
            return Err(FinetuneError::Contract(format!(
                "gene {g} is labelled both positive and negative"
            )));
        }
        Ok(Self {
            positives,
            negatives,
        })
    }

    /// Parses `gene<TAB>label` rows (label 1 or 0); a `gene label` header
    /// and `#` comments are skipped.
    pub fn read_tsv<R: Read>(mut r: R, source_name: &str) -> Result<Self, FinetuneError> {
        let mut text = String::new();
        r.read_to_string(&mut text)
            .map_err(|e| FinetuneError::Parse {
                source_name: source_name.into(),
                line: 0,
                message: e.to_string(),
            })?;
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            let bad = |m: String| FinetuneError::Parse {
                source_name: source_name.into(),
                line: i + 1,
                message: m,
            };
            if fields.len() != 2 {
                return Err(bad(format!("expected 2 fields, found {}", fields.len())));
            }
            match fields[1] {
                "1" => pos.push(fields[0].to_string()),
                "0" => neg.push(fields[0].to_string()),
                "label" if i == 0 || (pos.is_empty() && neg.is_empty()) => {}
                other => return Err(bad(format!("label must be 1 or 0, found {other:?}"))),
            }
        }
        Self::new(pos, neg)
    }

    pub fn positives(&self) -> &BTreeSet<String> {
        &self.positives
    }

    pub fn negatives(&self) -> &BTreeSet<String> {
        &self.negatives
    }

    pub fn label(&self, gene: &str) -> Option<bool> {
        if self.positives.contains(gene) {
            Some(true)
        } else if self.negatives.contains(gene) {
            Some(false)
        } else {
            None
        }
    }

    pub fn genes(&self) -> impl Iterator<Item = (&str, bool)> {
        self.positives
            .iter()
            .map(|g| (g.as_str(), true))
            .chain(self.negatives.iter().map(|g| (g.as_str(), false)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub gene: String,
    pub context: String,
    pub features: Vec<f64>,
    pub label: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneDataset {
    pub examples: Vec<Example>,
    /// Labelled genes with no embedding in any context.
    pub missing_genes: Vec<String>,
}

/// One example per (context, labelled gene active in that context).
pub fn build_finetune_dataset(
    table: &EmbeddingTable,
    labels: &RiskLabelSet,
) -> Result<FinetuneDataset, FinetuneError> {
    let mut examples = Vec::new();
    let mut missing_genes = Vec::new();
    for (gene, label) in labels.genes() {
        let entries = table.contexts_of(gene);
        if entries.is_empty() {
            missing_genes.push(gene.to_string());
        }
        for (ctx, z) in entries {
            examples.push(Example {
                gene: gene.to_string(),
                context: ctx.to_string(),
                features: z.to_vec(),
                label,
            });
        }
    }
    if examples.is_empty() {
        return Err(FinetuneError::EmptyDataset);
    }
    missing_genes.sort();
    Ok(FinetuneDataset {
        examples,
        missing_genes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 300,
            lr: 0.01,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

const SLOPE: f64 = 0.2;

/// One hidden leaky-ReLU layer and a sigmoid output unit.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl MlpParams {
    pub fn init(input: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            w1: Matrix::xavier_uniform(input, hidden, &mut rng),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::xavier_uniform(hidden, 1, &mut rng),
            b2: Matrix::zeros(1, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        vec![
            ("mlp.w1".into(), &self.w1),
            ("mlp.b1".into(), &self.b1),
            ("mlp.w2".into(), &self.w2),
            ("mlp.b2".into(), &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, m)| m.is_finite())
    }

    /// Risk probability for one embedding.
    pub fn score(&self, z: &[f64]) -> Result<f64, FinetuneError> {
        if z.len() != self.input_dim() {
            return Err(FinetuneError::Contract(format!(
                "embedding of dimension {} for an MLP over {}",
                z.len(),
                self.input_dim()
            )));
        }
        let x = Matrix::from_vec(1, z.len(), z.to_vec())?;
        let mut h = x.matmul(&self.w1)?;
        h.add_assign(&self.b1);
        let h = h.map(|v| if v > 0.0 { v } else { SLOPE * v });
        Ok(sigmoid(h.matmul(&self.w2)?.get(0, 0) + self.b2.get(0, 0)))
    }
}

fn logits_on_tape(tape: &mut Tape, x: Var, vars: &[Var; 4]) -> Result<Var, AutodiffError> {
    let h = tape.matmul(x, vars[0])?;
    let h = tape.add_row(h, vars[1])?;
    let h = tape.leaky_relu(h, SLOPE);
    let o = tape.matmul(h, vars[2])?;
    tape.add_row(o, vars[3])
}

/// Genes assigned to each side of a label-stratified split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneSplit {
    pub train: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

/// Holds out `round(fraction · n)` genes of each class (at least one when
/// the class has two or more genes).
pub fn split_genes(genes: &[(String, bool)], fraction: f64, seed: u64) -> GeneSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = GeneSplit {
        train: BTreeSet::new(),
        test: BTreeSet::new(),
    };
    for class in [true, false] {
        let mut g: Vec<&String> = genes
            .iter()
            .filter(|(_, l)| *l == class)
            .map(|(g, _)| g)
            .collect();
        g.sort();
        g.dedup();
        g.shuffle(&mut rng);
        let mut n_test = (g.len() as f64 * fraction).round() as usize;
        if n_test == 0 && g.len() >= 2 && fraction > 0.0 {
            n_test = 1;
        }
        for (i, gene) in g.into_iter().enumerate() {
            if i < n_test {
                split.test.insert(gene.clone());
            } else {
                split.train.insert(gene.clone());
            }
        }
    }
    split
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub split: GeneSplit,
    pub losses: Vec<f64>,
    pub train_accuracy: f64,
    pub n_train_examples: usize,
    pub n_test_examples: usize,
    pub missing_genes: Vec<String>,
}

/// Full-batch Adam on pooled training examples; returns the head and the
/// gene split it respected.
pub fn train_mlp(
    dataset: &FinetuneDataset,
    config: &MlpConfig,
) -> Result<(MlpParams, FinetuneReport), FinetuneError> {
    let genes: Vec<(String, bool)> = dataset
        .examples
        .iter()
        .map(|e| (e.gene.clone(), e.label))
        .collect();
    let classes: BTreeSet<bool> = genes.iter().map(|g| g.1).collect();
    if classes.len() < 2 {
        return Err(FinetuneError::Contract(
            "fine-tuning needs both classes".into(),
        ));
    }
    let split = split_genes(&genes, config.test_fraction, config.seed);
    let train: Vec<&Example> = dataset
        .examples
        .iter()
        .filter(|e| split.train.contains(&e.gene))
        .collect();
    let n_test_examples = dataset.examples.len() - train.len();
    let train_classes: BTreeSet<bool> = train.iter().map(|e| e.label).collect();
    if train_classes.len() < 2 {
        return Err(FinetuneError::Contract(
            "training side of the split lacks a class".into(),
        ));
    }
    let d = train[0].features.len();
    let x = Matrix::from_vec(
        train.len(),
        d,
        train
            .iter()
            .flat_map(|e| e.features.iter().copied())
            .collect(),
    )?;
    let y: Arc<[f64]> = train.iter().map(|e| e.label as u8 as f64).collect();

    let mut params = MlpParams::init(d, config.hidden, config.seed);
    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        params.named_tensors().into_iter().map(|(_, m)| m),
    );
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let vars = [
            tape.param(params.w1.clone()),
            tape.param(params.b1.clone()),
            tape.param(params.w2.clone()),
            tape.param(params.b2.clone()),
        ];
        let logits = logits_on_tape(&mut tape, xv, &vars)?;
        let loss = tape.bce_with_logits(logits, y.clone())?;
        let value = tape.scalar_value(loss);
        if !value.is_finite() {
            return Err(AutodiffError::Numerical("fine-tuning loss".into()).into());
        }
        losses.push(value);
        let grads = tape.backward(loss)?;
        let g: Vec<&Matrix> = vars.iter().map(|&v| grads.get(v).unwrap()).collect();
        adam.step(&mut params.tensors_mut(), &g)?;
    }
    let mut correct = 0;
    for e in &train {
        correct += ((params.score(&e.features)? >= 0.5) == e.label) as usize;
    }
    let report = FinetuneReport {
        split,
        losses,
        train_accuracy: correct as f64 / train.len() as f64,
        n_train_examples: train.len(),
        n_test_examples,
        missing_genes: dataset.missing_genes.clone(),
    };
    Ok((params, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextScore {
    pub gene: String,
    pub context: String,
    pub score: f64,
}

/// Scores every context in which `gene` is active, independently.
pub fn score_gene(
    gene: &str,
    table: &EmbeddingTable,
    mlp: &MlpParams,
) -> Result<Vec<ContextScore>, FinetuneError> {
    let entries = table.contexts_of(gene);
    if entries.is_empty() {
        return Err(FinetuneError::GeneNotFound(gene.to_string()));
    }
    entries
        .into_iter()
        .map(|(ctx, z)| {
            Ok(ContextScore {
                gene: gene.to_string(),
                context: ctx.to_string(),
                score: mlp.score(z)?,
            })
        })
        .collect()
}

/// Descending score, ties by context id.
pub fn rank_contexts(mut scores: Vec<ContextScore>) -> Vec<ContextScore> {
    scores.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.context.cmp(&b.context))
    });
    scores
}

/// Scores for every listed gene that has at least one embedding.
pub fn score_genes<'a>(
    genes: impl IntoIterator<Item = &'a str>,
    table: &EmbeddingTable,
    mlp: &MlpParams,
) -> Result<Vec<ContextScore>, FinetuneError> {
    let mut out = Vec::new();
    for g in genes {
        match score_gene(g, table, mlp) {
            Ok(s) => out.extend(s),
            Err(FinetuneError::GeneNotFound(_)) => {}
            Err(e) => return Err(e),
        }
    }
    out.sort_by(|a, b| (&a.context, &a.gene).cmp(&(&b.context, &b.gene)));
    Ok(out)
}

/// Ranking metrics per context over the scored labelled genes; `None`
/// where a context lacks a class.
pub fn eval_ranking(
    scores: &[ContextScore],
    labels: &RiskLabelSet,
) -> BTreeMap<String, Option<RankingMetrics>> {
    let mut by_context: BTreeMap<&str, Vec<(&str, f64, bool)>> = BTreeMap::new();
    for s in scores {
        if let Some(l) = labels.label(&s.gene) {
            by_context
                .entry(&s.context)
                .or_default()
                .push((&s.gene, s.score, l));
        }
    }
    by_context
        .into_iter()
        .map(|(c, items)| (c.to_string(), ranking_metrics(&items)))
        .collect()
}

/// `gene,context,score`.
pub fn scores_csv(scores: &[ContextScore]) -> String {
    let mut s = String::from("gene,context,score\n");
    for c in scores {
        let _ = writeln!(s, "{},{},{}", c.gene, c.context, c.score);
    }
    s
}

/// `context,ap5,...,r10` with blank fields where undefined.
pub fn ranking_csv(metrics: &BTreeMap<String, Option<RankingMetrics>>) -> String {
    let mut s = format!("context,{}\n", RankingMetrics::NAMES.join(","));
    for (c, m) in metrics {
        s.push_str(c);
        match m {
            Some(m) => {
                for v in m.values() {
                    let _ = write!(s, ",{v}");
                }
            }
            None => s.push_str(&",".repeat(8)),
        }
        s.push('\n');
    }
    s
}
