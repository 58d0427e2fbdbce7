use std::collections::HashSet;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_on_tape, PairBatch};
use super::split::{sample_non_edges, split_edges, EdgeSplit, SplitRatios};
use super::PretrainError;
use crate::autodiff::{AdamConfig, AdamState, Tape};
use crate::kg::KnowledgeGraph;
use crate::metrics::{auroc, link_metrics, LinkMetrics};
use crate::model::{
    forward, forward_on_tape, init_params, EmbeddingTable, GraphLayout, ModelConfig, ModelParams,
    ParamVars,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub ratios: SplitRatios,
    pub negative_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.01,
            ratios: SplitRatios::default(),
            negative_ratio: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub valid_auroc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextMetrics {
    pub context: String,
    pub metrics: Option<LinkMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_valid_auroc: Option<f64>,
    pub test: Vec<ContextMetrics>,
    pub mean_test_auroc: Option<f64>,
    /// Seconds spent in this process; kept out of the serialized report so
    /// reruns produce identical files.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl TrainReport {
    /// `context,auroc,ap,acc,f1`, blank fields where undefined.
    pub fn metrics_csv(&self) -> String {
        metrics_csv(&self.test)
    }
}

pub fn metrics_csv(rows: &[ContextMetrics]) -> String {
    let mut s = String::from("context,auroc,ap,acc,f1\n");
    for r in rows {
        match &r.metrics {
            Some(m) => {
                let _ = writeln!(s, "{},{},{},{},{}", r.context, m.auroc, m.ap, m.acc, m.f1);
            }
            None => {
                let _ = writeln!(s, "{},,,,", r.context);
            }
        }
    }
    s
}

/// Parameters of the best validation epoch so far.
#[derive(Clone, Debug, PartialEq)]
pub struct BestState {
    pub epoch: usize,
    pub valid_auroc: f64,
    pub params: ModelParams,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState {
    pub epoch: usize,
    pub params: ModelParams,
    pub adam: AdamState,
    pub rng: ChaCha8Rng,
    pub best: Option<BestState>,
    pub history: Vec<EpochRecord>,
}

/// Full-batch link-prediction trainer. Message passing sees training
/// edges only.
pub struct Trainer<'a> {
    kg: &'a KnowledgeGraph,
    train_kg: KnowledgeGraph,
    layout: GraphLayout,
    split: EdgeSplit,
    model_config: ModelConfig,
    config: TrainConfig,
    forbidden: Vec<HashSet<(usize, usize)>>,
    /// Subtype indices in which each stacked row's protein is active.
    row_active: Vec<Vec<usize>>,
    n_subtypes: usize,
    state: TrainerState,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(
        kg: &'a KnowledgeGraph,
        model_config: &ModelConfig,
        config: &TrainConfig,
    ) -> Result<Self, PretrainError> {
        model_config.validate()?;
        if !(config.lr > 0.0 && config.lr.is_finite()) || !(config.negative_ratio > 0.0) {
            return Err(PretrainError::Config(format!(
                "lr {} and negative_ratio {} must be positive",
                config.lr, config.negative_ratio
            )));
        }
        let split = split_edges(kg, &config.ratios, config.negative_ratio, config.seed)?;
        let train_kg = kg.with_context_edges(split.train_edges())?;
        let layout = GraphLayout::new(&train_kg);
        let forbidden = kg
            .contexts()
            .iter()
            .map(|c| c.edges().iter().copied().collect())
            .collect();
        let mut active: Vec<Vec<usize>> = vec![Vec::new(); kg.global.n_proteins()];
        for (k, c) in kg.contexts().iter().enumerate() {
            for &p in c.proteins() {
                active[p].push(layout.context_subtype[k]);
            }
        }
        let row_active = layout
            .row_protein
            .iter()
            .map(|&p| active[p].clone())
            .collect();
        let params = init_params(model_config, kg)?;
        let adam = AdamState::new(
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
            params.named_tensors().into_iter().map(|(_, m)| m),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(0);
        Ok(Self {
            kg,
            train_kg,
            layout,
            split,
            model_config: model_config.clone(),
            config: config.clone(),
            forbidden,
            row_active,
            n_subtypes: kg.metagraph.subtypes().len(),
            state: TrainerState {
                epoch: 0,
                params,
                adam,
                rng,
                best: None,
                history: Vec::new(),
            },
            started: Instant::now(),
        })
    }

    pub fn split(&self) -> &EdgeSplit {
        &self.split
    }

    /// The knowledge graph restricted to training edges.
    pub fn train_graph(&self) -> &KnowledgeGraph {
        &self.train_kg
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn epoch(&self) -> usize {
        self.state.epoch
    }

    pub fn is_done(&self) -> bool {
        self.state.epoch >= self.config.epochs
    }

    /// Replaces the mutable state, e.g. from a checkpoint.
    pub fn restore(&mut self, state: TrainerState) -> Result<(), PretrainError> {
        let expected: Vec<_> = self
            .state
            .params
            .named_tensors()
            .into_iter()
            .map(|(n, m)| (n, m.shape()))
            .collect();
        let got: Vec<_> = state
            .params
            .named_tensors()
            .into_iter()
            .map(|(n, m)| (n, m.shape()))
            .collect();
        if expected != got || state.adam.first.len() != expected.len() {
            return Err(PretrainError::Contract(
                "restored state does not match the model layout".into(),
            ));
        }
        self.state = state;
        Ok(())
    }

    fn ppi_batch(&mut self) -> Result<PairBatch, PretrainError> {
        let mut batch = PairBatch::default();
        for (k, (c, split)) in self
            .kg
            .contexts()
            .iter()
            .zip(&self.split.contexts)
            .enumerate()
        {
            for &(a, b) in &split.train {
                batch.push(self.layout.row(k, a), self.layout.row(k, b), true);
            }
            let count = (split.train.len() as f64 * self.config.negative_ratio).round() as usize;
            let neg = sample_non_edges(c.n_nodes(), &self.forbidden[k], count, &mut self.state.rng)
                .ok_or_else(|| PretrainError::SamplingExhausted {
                    context: c.context_id.clone(),
                    requested: count,
                })?;
            for (a, b) in neg {
                batch.push(self.layout.row(k, a), self.layout.row(k, b), false);
            }
        }
        Ok(batch)
    }

    fn membership_batch(&mut self) -> PairBatch {
        let mut batch = PairBatch::default();
        for k in 0..self.layout.n_contexts() {
            let own = self.layout.context_subtype[k];
            for row in self.layout.offsets[k]..self.layout.offsets[k + 1] {
                batch.push(row, own, true);
            }
        }
        for row in 0..self.layout.n_rows() {
            let active = &self.row_active[row];
            if active.len() >= self.n_subtypes {
                continue;
            }
            loop {
                let s = self.state.rng.gen_range(0..self.n_subtypes);
                if !active.contains(&s) {
                    batch.push(row, s, false);
                    break;
                }
            }
        }
        batch
    }

    /// Runs one epoch: fresh negatives, one Adam step, validation.
    pub fn step(&mut self) -> Result<EpochRecord, PretrainError> {
        let epoch = self.state.epoch;
        let ppi = self.ppi_batch()?;
        let membership = self.membership_batch();

        let mut tape = Tape::new();
        let pv = ParamVars::register(&mut tape, &self.state.params);
        let out = forward_on_tape(&mut tape, &self.layout, &pv, &self.model_config)?;
        let loss = loss_on_tape(&mut tape, out.proteins, out.cells, &ppi, &membership)?;
        let loss_value = tape.scalar_value(loss);
        if !loss_value.is_finite() {
            return Err(PretrainError::Diverged { epoch });
        }
        let grads = tape.backward(loss)?;
        let vars = pv.vars();
        let grad_refs: Vec<_> = vars
            .iter()
            .map(|&v| grads.get(v).expect("gradient for every parameter"))
            .collect();
        if grad_refs.iter().any(|g| !g.is_finite()) {
            return Err(PretrainError::Diverged { epoch });
        }
        let mut next = self.state.params.clone();
        self.state.adam.step(&mut next.tensors_mut(), &grad_refs)?;
        if !next.is_finite() {
            return Err(PretrainError::Diverged { epoch });
        }
        self.state.params = next;
        self.state.epoch += 1;

        let table = forward(&self.train_kg, &self.state.params, &self.model_config)?;
        let valid_auroc = mean_auroc(&held_out_scores(self.kg, &table, &self.split, Held::Valid)?);
        if let Some(v) = valid_auroc {
            if self.state.best.as_ref().is_none_or(|b| v > b.valid_auroc) {
                self.state.best = Some(BestState {
                    epoch: self.state.epoch,
                    valid_auroc: v,
                    params: self.state.params.clone(),
                });
            }
        }
        let record = EpochRecord {
            epoch: self.state.epoch,
            loss: loss_value,
            valid_auroc,
        };
        self.state.history.push(record.clone());
        Ok(record)
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn run<F>(&mut self, mut on_epoch: F) -> Result<(), PretrainError>
    where
        F: FnMut(&Self, &EpochRecord) -> Result<(), PretrainError>,
    {
        while !self.is_done() {
            let record = self.step()?;
            on_epoch(self, &record)?;
        }
        Ok(())
    }

    /// Selected parameters (best validation epoch, else the latest), their
    /// embeddings on the training graph, and the report.
    pub fn finish(&self) -> Result<(ModelParams, EmbeddingTable, TrainReport), PretrainError> {
        let params = self
            .state
            .best
            .as_ref()
            .map_or(&self.state.params, |b| &b.params)
            .clone();
        let table = forward(&self.train_kg, &params, &self.model_config)?;
        let test = eval_link_prediction(self.kg, &table, &self.split)?;
        let mean_test_auroc = mean_of(test.iter().filter_map(|c| c.metrics.map(|m| m.auroc)));
        let report = TrainReport {
            epochs_run: self.state.epoch,
            history: self.state.history.clone(),
            best_epoch: self.state.best.as_ref().map(|b| b.epoch),
            best_valid_auroc: self.state.best.as_ref().map(|b| b.valid_auroc),
            test,
            mean_test_auroc,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
        };
        Ok((params, table, report))
    }
}

/// Trains from scratch for `config.epochs` epochs.
pub fn train(
    kg: &KnowledgeGraph,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<(ModelParams, EmbeddingTable, TrainReport), PretrainError> {
    let mut trainer = Trainer::new(kg, model_config, config)?;
    trainer.run(|_, _| Ok(()))?;
    trainer.finish()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Held {
    Valid,
    Test,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn mean_auroc(per_context: &[(Vec<f64>, Vec<bool>)]) -> Option<f64> {
    mean_of(per_context.iter().filter_map(|(s, l)| auroc(s, l)))
}

/// Per-context `(scores, labels)` of held-out positives and negatives,
/// looked up by protein name so any table with matching entries works.
pub fn held_out_scores(
    kg: &KnowledgeGraph,
    table: &EmbeddingTable,
    split: &EdgeSplit,
    which: Held,
) -> Result<Vec<(Vec<f64>, Vec<bool>)>, PretrainError> {
    let mut out = Vec::with_capacity(split.contexts.len());
    for (c, s) in kg.contexts().iter().zip(&split.contexts) {
        let (pos, neg) = match which {
            Held::Valid => (&s.valid, &s.valid_negatives),
            Held::Test => (&s.test, &s.test_negatives),
        };
        let rows: Vec<usize> = c
            .proteins()
            .iter()
            .map(|&p| {
                let name = kg.global.name(p);
                table.protein_row(&c.context_id, name).ok_or_else(|| {
                    PretrainError::Contract(format!("no embedding for ({}, {name})", c.context_id))
                })
            })
            .collect::<Result<_, _>>()?;
        let mut scores = Vec::with_capacity(pos.len() + neg.len());
        let mut labels = Vec::with_capacity(pos.len() + neg.len());
        for (edges, label) in [(pos, true), (neg, false)] {
            for &(a, b) in edges {
                let z: f64 = table
                    .row(rows[a])
                    .iter()
                    .zip(table.row(rows[b]))
                    .map(|(x, y)| x * y)
                    .sum();
                scores.push(crate::autodiff::sigmoid(z));
                labels.push(label);
            }
        }
        out.push((scores, labels));
    }
    Ok(out)
}

/// Test-set link prediction metrics per context; `None` where the test
/// set lacks a class.
pub fn eval_link_prediction(
    kg: &KnowledgeGraph,
    table: &EmbeddingTable,
    split: &EdgeSplit,
) -> Result<Vec<ContextMetrics>, PretrainError> {
    let scores = held_out_scores(kg, table, split, Held::Test)?;
    Ok(kg
        .contexts()
        .iter()
        .zip(scores)
        .map(|(c, (s, l))| ContextMetrics {
            context: c.context_id.clone(),
            metrics: link_metrics(&s, &l),
        })
        .collect())
}
