use std::sync::Arc;

use super::PretrainError;
use crate::autodiff::{AutodiffError, Tape, Var};
use crate::model::EmbeddingTable;

/// Labelled pairs addressed by row index: `left` rows of one embedding
/// matrix against `right` rows of the same or another matrix.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairBatch {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub labels: Vec<f64>,
}

impl PairBatch {
    pub fn push(&mut self, left: usize, right: usize, label: bool) {
        self.left.push(left);
        self.right.push(right);
        self.labels.push(if label { 1.0 } else { 0.0 });
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn pair_bce(tape: &mut Tape, a: Var, b: Var, batch: &PairBatch) -> Result<Var, AutodiffError> {
    let za = tape.gather_rows(a, Arc::from(batch.left.as_slice()))?;
    let zb = tape.gather_rows(b, Arc::from(batch.right.as_slice()))?;
    let logits = tape.row_dot(za, zb)?;
    tape.bce_with_logits(logits, Arc::from(batch.labels.as_slice()))
}

/// Mean of the interaction BCE and the membership BCE (either may be
/// empty, in which case the other term stands alone).
pub fn loss_on_tape(
    tape: &mut Tape,
    proteins: Var,
    cells: Var,
    ppi: &PairBatch,
    membership: &PairBatch,
) -> Result<Var, AutodiffError> {
    match (ppi.is_empty(), membership.is_empty()) {
        (true, true) => Err(AutodiffError::ContractViolation(
            "empty pretraining batch".into(),
        )),
        (false, true) => pair_bce(tape, proteins, proteins, ppi),
        (true, false) => pair_bce(tape, proteins, cells, membership),
        (false, false) => {
            let a = pair_bce(tape, proteins, proteins, ppi)?;
            let b = pair_bce(tape, proteins, cells, membership)?;
            let s = tape.add(a, b)?;
            Ok(tape.scale(s, 0.5))
        }
    }
}

/// A labelled interaction `(context, protein, protein)` or membership
/// `(context, protein, cell node)` example.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPair {
    pub context: String,
    pub protein: String,
    pub other: String,
    pub label: bool,
}

fn bce(logit: f64, y: f64) -> f64 {
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Value-only pretraining loss over explicit named examples.
pub fn pretrain_loss(
    table: &EmbeddingTable,
    ppi: &[LabeledPair],
    membership: &[LabeledPair],
) -> Result<f64, PretrainError> {
    let missing = |what: &str, c: &str, p: &str| {
        PretrainError::Contract(format!("no embedding for {what} ({c}, {p})"))
    };
    let mut terms = Vec::new();
    if !ppi.is_empty() {
        let mut total = 0.0;
        for e in ppi {
            let a = table
                .protein(&e.context, &e.protein)
                .ok_or_else(|| missing("protein", &e.context, &e.protein))?;
            let b = table
                .protein(&e.context, &e.other)
                .ok_or_else(|| missing("protein", &e.context, &e.other))?;
            total += bce(dot(a, b), e.label as u8 as f64);
        }
        terms.push(total / ppi.len() as f64);
    }
    if !membership.is_empty() {
        let mut total = 0.0;
        for e in membership {
            let a = table
                .protein(&e.context, &e.protein)
                .ok_or_else(|| missing("protein", &e.context, &e.protein))?;
            let b = table
                .cell(&e.other)
                .ok_or_else(|| missing("cell node", &e.context, &e.other))?;
            total += bce(dot(a, b), e.label as u8 as f64);
        }
        terms.push(total / membership.len() as f64);
    }
    if terms.is_empty() {
        return Err(PretrainError::Contract("empty pretraining batch".into()));
    }
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}
