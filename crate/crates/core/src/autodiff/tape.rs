//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every primitive evaluates eagerly and appends a record to the tape, so
//! node indices are already a topological order. `backward` walks the tape
//! from the loss node towards the leaves and only touches ancestors of the
//! loss.

use std::sync::Arc;

use super::{AutodiffError, Matrix};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf { trainable: bool },
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    ScaleRows(Var, Var),
    RowwiseConcat(Vec<Var>),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Log(Var),
    SegmentSoftmax(Var, Arc<[usize]>),
    RowDot(Var, Var),
    Sum(Var),
    Mean(Var),
    BceWithLogits(Var, Arc<[f64]>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient in [`Gradients::trainable`].
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf { trainable: false })
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf { trainable: true })
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.get(0, 0)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::Shape {
                op,
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Adds a `1 x c` row to every row of an `r x c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            return Err(AutodiffError::Shape {
                op: "add_row",
                left: (r, c),
                right: self.shape(row),
            });
        }
        let bias = self.value(row).as_slice().to_vec();
        let mut value = self.value(a).clone();
        for i in 0..r {
            for (v, b) in value.row_mut(i).iter_mut().zip(&bias) {
                *v += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).scaled(factor);
        self.push(value, Op::Scale(a, factor))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va
            .as_slice()
            .iter()
            .zip(vb.as_slice())
            .map(|(x, y)| x * y)
            .collect();
        let value = Matrix::from_vec(va.rows(), va.cols(), data)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Multiplies row `i` of `a` by `weights[i]` (`weights` is `r x 1`).
    pub fn scale_rows(&mut self, a: Var, weights: Var) -> Result<Var, AutodiffError> {
        let (r, _) = self.shape(a);
        if self.shape(weights) != (r, 1) {
            return Err(AutodiffError::Shape {
                op: "scale_rows",
                left: self.shape(a),
                right: self.shape(weights),
            });
        }
        let w = self.value(weights).as_slice().to_vec();
        let mut value = self.value(a).clone();
        for (i, wi) in w.iter().enumerate() {
            for v in value.row_mut(i) {
                *v *= wi;
            }
        }
        Ok(self.push(value, Op::ScaleRows(a, weights)))
    }

    /// Row-wise concatenation: row `i` of the output is `[a_i | b_i | ...]`.
    pub fn rowwise_concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let Some(&first) = parts.first() else {
            return Err(AutodiffError::ContractViolation(
                "rowwise_concat needs at least one input".into(),
            ));
        };
        let rows = self.shape(first).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(AutodiffError::Shape {
                    op: "rowwise_concat",
                    left: self.shape(first),
                    right: self.shape(p),
                });
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(i);
                value.row_mut(i)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push(value, Op::RowwiseConcat(parts.to_vec())))
    }

    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var, AutodiffError> {
        let (r, c) = self.shape(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(AutodiffError::Index {
                op: "gather_rows",
                index: bad,
                bound: r,
            });
        }
        let src = self.value(a);
        let mut value = Matrix::zeros(index.len(), c);
        for (o, &i) in index.iter().enumerate() {
            value.row_mut(o).copy_from_slice(src.row(i));
        }
        Ok(self.push(value, Op::GatherRows(a, index)))
    }

    /// Sums row `k` of `a` into output row `index[k]`; output has `n_out` rows.
    pub fn scatter_add_rows(
        &mut self,
        a: Var,
        index: Arc<[usize]>,
        n_out: usize,
    ) -> Result<Var, AutodiffError> {
        let (r, c) = self.shape(a);
        if index.len() != r {
            return Err(AutodiffError::Shape {
                op: "scatter_add_rows",
                left: (r, c),
                right: (index.len(), 1),
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n_out) {
            return Err(AutodiffError::Index {
                op: "scatter_add_rows",
                index: bad,
                bound: n_out,
            });
        }
        let src = self.value(a);
        let mut value = Matrix::zeros(n_out, c);
        for (k, &o) in index.iter().enumerate() {
            for (v, s) in value.row_mut(o).iter_mut().zip(src.row(k)) {
                *v += s;
            }
        }
        Ok(self.push(value, Op::ScatterAddRows(a, index)))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        if self.value(a).as_slice().iter().any(|&v| v <= 0.0) {
            return Err(AutodiffError::Numerical(
                "log of a non-positive value".into(),
            ));
        }
        let value = self.value(a).map(f64::ln);
        Ok(self.push(value, Op::Log(a)))
    }

    /// Softmax of each column taken separately within every segment.
    /// `segments[k]` names the segment of row `k`.
    pub fn segment_softmax(
        &mut self,
        a: Var,
        segments: Arc<[usize]>,
    ) -> Result<Var, AutodiffError> {
        let (r, c) = self.shape(a);
        if segments.len() != r {
            return Err(AutodiffError::Shape {
                op: "segment_softmax",
                left: (r, c),
                right: (segments.len(), 1),
            });
        }
        let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
        let x = self.value(a);
        let mut max = Matrix::filled(n_seg, c, f64::NEG_INFINITY);
        for (k, &s) in segments.iter().enumerate() {
            for j in 0..c {
                if x.get(k, j) > max.get(s, j) {
                    max.set(s, j, x.get(k, j));
                }
            }
        }
        let mut value = Matrix::zeros(r, c);
        let mut denom = Matrix::zeros(n_seg, c);
        for (k, &s) in segments.iter().enumerate() {
            for j in 0..c {
                let e = (x.get(k, j) - max.get(s, j)).exp();
                value.set(k, j, e);
                denom.set(s, j, denom.get(s, j) + e);
            }
        }
        for (k, &s) in segments.iter().enumerate() {
            for j in 0..c {
                value.set(k, j, value.get(k, j) / denom.get(s, j));
            }
        }
        Ok(self.push(value, Op::SegmentSoftmax(a, segments)))
    }

    /// Per-row inner product of two equally shaped matrices (`r x 1` output).
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("row_dot", a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = (0..va.rows())
            .map(|i| va.row(i).iter().zip(vb.row(i)).map(|(x, y)| x * y).sum())
            .collect();
        Ok(self.push(Matrix::column(data), Op::RowDot(a, b)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(AutodiffError::ContractViolation(
                "mean of an empty matrix".into(),
            ));
        }
        let value = Matrix::scalar(self.value(a).sum() / n as f64);
        Ok(self.push(value, Op::Mean(a)))
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and `targets`,
    /// evaluated in the overflow-free form `max(x,0) - x*y + ln(1+e^{-|x|})`.
    pub fn bce_with_logits(
        &mut self,
        logits: Var,
        targets: Arc<[f64]>,
    ) -> Result<Var, AutodiffError> {
        let x = self.value(logits);
        if x.cols() != 1 || x.rows() != targets.len() {
            return Err(AutodiffError::Shape {
                op: "bce_with_logits",
                left: x.shape(),
                right: (targets.len(), 1),
            });
        }
        if targets.is_empty() {
            return Err(AutodiffError::ContractViolation("empty BCE batch".into()));
        }
        let total: f64 = x
            .as_slice()
            .iter()
            .zip(targets.iter())
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        let value = Matrix::scalar(total / targets.len() as f64);
        Ok(self.push(value, Op::BceWithLogits(logits, targets)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.shape(loss) != (1, 1) {
            return Err(AutodiffError::ContractViolation(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf { .. }) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }

        let trainable = self.nodes[..=loss.0]
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf { trainable: true }))
            .map(|(i, n)| {
                let g = grads[i]
                    .take()
                    .unwrap_or_else(|| Matrix::zeros(n.value.rows(), n.value.cols()));
                (Var(i), g)
            })
            .collect();
        Ok(Gradients { trainable })
    }

    fn propagate(
        &self,
        node: &Node,
        g: &Matrix,
        grads: &mut [Option<Matrix>],
    ) -> Result<(), AutodiffError> {
        let mut acc = |v: Var, contrib: Matrix| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        };
        match &node.op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                acc(*a, g.matmul_t(vb)?);
                acc(*b, va.t_matmul(g)?);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                let mut col_sums = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (s, v) in col_sums.as_mut_slice().iter_mut().zip(g.row(i)) {
                        *s += v;
                    }
                }
                acc(*a, g.clone());
                acc(*row, col_sums);
            }
            Op::Scale(a, f) => acc(*a, g.scaled(*f)),
            Op::Mul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let ga = zip_map(g, vb, |g, y| g * y);
                let gb = zip_map(g, va, |g, x| g * x);
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::ScaleRows(a, w) => {
                let va = self.value(*a);
                let vw = self.value(*w);
                let mut ga = g.clone();
                let mut gw = Matrix::zeros(vw.rows(), 1);
                for i in 0..g.rows() {
                    let wi = vw.get(i, 0);
                    let dot: f64 = g.row(i).iter().zip(va.row(i)).map(|(x, y)| x * y).sum();
                    gw.set(i, 0, dot);
                    for v in ga.row_mut(i) {
                        *v *= wi;
                    }
                }
                acc(*a, ga);
                acc(*w, gw);
            }
            Op::RowwiseConcat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    let mut gp = Matrix::zeros(g.rows(), c);
                    for i in 0..g.rows() {
                        gp.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + c]);
                    }
                    offset += c;
                    acc(p, gp);
                }
            }
            Op::GatherRows(a, index) => {
                let (r, c) = self.value(*a).shape();
                let mut ga = Matrix::zeros(r, c);
                for (k, &i) in index.iter().enumerate() {
                    for (t, s) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *t += s;
                    }
                }
                acc(*a, ga);
            }
            Op::ScatterAddRows(a, index) => {
                let c = g.cols();
                let mut ga = Matrix::zeros(index.len(), c);
                for (k, &o) in index.iter().enumerate() {
                    ga.row_mut(k).copy_from_slice(g.row(o));
                }
                acc(*a, ga);
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                acc(
                    *a,
                    zip_map(g, x, |g, x| if x > 0.0 { g } else { g * slope }),
                );
            }
            Op::Sigmoid(a) => {
                acc(*a, zip_map(g, &node.value, |g, y| g * y * (1.0 - y)));
            }
            Op::Log(a) => {
                let x = self.value(*a);
                acc(*a, zip_map(g, x, |g, x| g / x));
            }
            Op::SegmentSoftmax(a, segments) => {
                let y = &node.value;
                let c = y.cols();
                let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
                let mut weighted = Matrix::zeros(n_seg, c);
                for (k, &s) in segments.iter().enumerate() {
                    for j in 0..c {
                        weighted.set(s, j, weighted.get(s, j) + y.get(k, j) * g.get(k, j));
                    }
                }
                let mut ga = Matrix::zeros(y.rows(), c);
                for (k, &s) in segments.iter().enumerate() {
                    for j in 0..c {
                        ga.set(k, j, y.get(k, j) * (g.get(k, j) - weighted.get(s, j)));
                    }
                }
                acc(*a, ga);
            }
            Op::RowDot(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let mut ga = vb.clone();
                let mut gb = va.clone();
                for i in 0..g.rows() {
                    let gi = g.get(i, 0);
                    ga.row_mut(i).iter_mut().for_each(|v| *v *= gi);
                    gb.row_mut(i).iter_mut().for_each(|v| *v *= gi);
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, Matrix::filled(r, c, g.get(0, 0)));
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, Matrix::filled(r, c, g.get(0, 0) / (r * c) as f64));
            }
            Op::BceWithLogits(logits, targets) => {
                let x = self.value(*logits);
                let n = targets.len() as f64;
                let scale = g.get(0, 0) / n;
                let data = x
                    .as_slice()
                    .iter()
                    .zip(targets.iter())
                    .map(|(&x, &y)| scale * (sigmoid(x) - y))
                    .collect();
                acc(*logits, Matrix::column(data));
            }
        }
        Ok(())
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("zip_map of equal shapes")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradients of every trainable leaf that precedes the loss on the tape.
#[derive(Debug)]
pub struct Gradients {
    trainable: Vec<(Var, Matrix)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.trainable
            .binary_search_by_key(&v, |(k, _)| *k)
            .ok()
            .map(|i| &self.trainable[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Matrix)> {
        self.trainable.iter().map(|(v, m)| (*v, m))
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        let i = self.trainable.binary_search_by_key(&v, |(k, _)| *k).ok()?;
        Some(std::mem::replace(
            &mut self.trainable[i].1,
            Matrix::zeros(0, 0),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut t = Tape::new();
        let w = t.param(Matrix::from_rows(&[vec![1.0, -2.0], vec![3.0, 0.5]]).unwrap());
        let loss = t.sum(w);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap(), &Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn half_squared_norm_gives_identity_map() {
        let w0 = Matrix::from_rows(&[vec![1.0, -2.0, 0.25]]).unwrap();
        let mut t = Tape::new();
        let w = t.param(w0.clone());
        let sq = t.mul(w, w).unwrap();
        let s = t.sum(sq);
        let loss = t.scale(s, 0.5);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap(), &w0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let w = t.param(Matrix::zeros(2, 1));
        assert!(matches!(
            t.backward(w),
            Err(AutodiffError::ContractViolation(_))
        ));
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::scalar(0.0));
        let y = t.sigmoid(x);
        assert_eq!(t.scalar_value(y), 0.5);
    }

    #[test]
    fn segment_softmax_uniform_within_segment() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::column(vec![0.0, 0.0]));
        let y = t.segment_softmax(x, Arc::from(vec![3usize, 3])).unwrap();
        assert_eq!(t.value(y).as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn unrelated_entries_do_not_change_gradients() {
        let w0 = Matrix::from_rows(&[vec![0.3, -0.7], vec![1.1, 0.2]]).unwrap();
        let run = |noise: bool| {
            let mut t = Tape::new();
            let w = t.param(w0.clone());
            if noise {
                let other = t.param(Matrix::filled(3, 3, 2.0));
                let _ = t.sigmoid(other);
                let _ = t.mul(w, w).unwrap();
            }
            let s = t.sigmoid(w);
            let loss = t.sum(s);
            t.backward(loss).unwrap().get(w).unwrap().clone()
        };
        assert_eq!(run(false), run(true));
    }

    #[test]
    fn gather_rejects_out_of_range() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::zeros(2, 2));
        let err = t.gather_rows(x, Arc::from(vec![0usize, 2])).unwrap_err();
        assert_eq!(
            err,
            AutodiffError::Index {
                op: "gather_rows",
                index: 2,
                bound: 2
            }
        );
    }

    #[test]
    fn bce_at_zero_logits_is_ln2() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::column(vec![0.0; 4]));
        let l = t
            .bce_with_logits(x, Arc::from(vec![1.0, 0.0, 1.0, 0.0]))
            .unwrap();
        assert!((t.scalar_value(l) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
