//! Reverse-mode differentiation over a recorded tape of tensor operations.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters enter the
//! tape through [`Graph::param`], which copies the current value once per
//! graph; [`Graph::backward`] then accumulates into the store's gradient
//! buffers, so a parameter used by several heads receives the sum of their
//! contributions.

use std::collections::HashMap;

use rand::Rng;

use super::tensor::{matmul_nt_acc, matmul_tn_acc};
use super::{ParamId, ParamStore, Tensor};
use crate::crf;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    ConcatCols(Vec<NodeId>),
    StackRows(Vec<NodeId>),
    Row(NodeId, usize),
    SliceCols(NodeId, usize),
    GatherRows(NodeId, Vec<usize>),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Dropout(NodeId, Tensor),
    RowSoftmax(NodeId),
    Sum(NodeId),
    SoftmaxXent {
        logits: NodeId,
        /// d loss / d logits, computed during the forward pass.
        grad: Tensor,
    },
    CrfNll {
        emissions: NodeId,
        transitions: NodeId,
        grad_emissions: Tensor,
        grad_transitions: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Per-node gradients produced by a backward sweep.
#[derive(Debug)]
pub struct NodeGrads(Vec<Option<Tensor>>);

impl NodeGrads {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.0.get(id.0).and_then(|g| g.as_ref())
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    /// Constant input; receives gradients but feeds no parameter.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.params.get(&id) {
            return n;
        }
        let n = self.push(store.value(id).clone(), Op::Param);
        self.params.insert(id, n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b)).map_err(|_| Error::Dimension {
            op: "add",
            left: self.shape(a),
            right: self.shape(b),
        })?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Adds a 1×c row to every row of an r×c matrix.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (ra, ca) = self.shape(a);
        if self.shape(row) != (1, ca) {
            return Err(Error::Dimension {
                op: "add_row",
                left: (ra, ca),
                right: self.shape(row),
            });
        }
        let mut v = self.value(a).clone();
        let b = self.value(row).data().to_vec();
        for r in 0..ra {
            for (x, y) in v.row_mut(r).iter_mut().zip(&b) {
                *x += y;
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.value(a).ensure_same_shape(self.value(b), "mul")?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let v = Tensor::from_vec(va.rows(), va.cols(), data)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    left: self.shape(parts[0]),
                    right: s,
                });
            }
            cols += s.1;
        }
        let mut v = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.nodes[p.0].value.row(r);
                v.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn stack_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let cols = parts.first().map_or(0, |&p| self.shape(p).1);
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.1 != cols {
                return Err(Error::Dimension {
                    op: "stack_rows",
                    left: self.shape(parts[0]),
                    right: s,
                });
            }
            data.extend_from_slice(self.value(p).data());
            rows += s.0;
        }
        let v = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(v, Op::StackRows(parts.to_vec())))
    }

    pub fn row(&mut self, a: NodeId, r: usize) -> Result<NodeId> {
        let (rows, cols) = self.shape(a);
        if r >= rows {
            return Err(Error::Dimension {
                op: "row",
                left: (rows, cols),
                right: (r, cols),
            });
        }
        let v = Tensor::row_vector(self.value(a).row(r).to_vec());
        Ok(self.push(v, Op::Row(a, r)))
    }

    /// Columns `[start, end)` of every row.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (rows, cols) = self.shape(a);
        if start > end || end > cols {
            return Err(Error::Dimension {
                op: "slice_cols",
                left: (rows, cols),
                right: (start, end),
            });
        }
        let mut v = Tensor::zeros(rows, end - start);
        for r in 0..rows {
            v.row_mut(r)
                .copy_from_slice(&self.value(a).row(r)[start..end]);
        }
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    /// Embedding lookup: selected rows of a table, in order.
    pub fn gather_rows(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let (rows, cols) = self.shape(table);
        let mut v = Tensor::zeros(indices.len(), cols);
        for (i, &ix) in indices.iter().enumerate() {
            if ix >= rows {
                return Err(Error::Dimension {
                    op: "gather_rows",
                    left: (rows, cols),
                    right: (ix, cols),
                });
            }
            v.row_mut(i).copy_from_slice(self.value(table).row(ix));
        }
        Ok(self.push(v, Op::GatherRows(table, indices.to_vec())))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// Inverted dropout: kept activations are scaled by `1/(1-p)`. Identity
    /// (no node recorded) when `train` is false or `p` is zero.
    pub fn dropout(
        &mut self,
        a: NodeId,
        p: f64,
        train: bool,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Usage(format!("dropout rate {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let src = self.value(a);
        let mut mask = Tensor::zeros(src.rows(), src.cols());
        for m in mask.data_mut() {
            if rng.gen::<f64>() >= p {
                *m = keep;
            }
        }
        let data = src
            .data()
            .iter()
            .zip(mask.data())
            .map(|(x, m)| x * m)
            .collect();
        let v = Tensor::from_vec(src.rows(), src.cols(), data)?;
        Ok(self.push(v, Op::Dropout(a, mask)))
    }

    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            softmax_in_place(v.row_mut(r));
        }
        self.push(v, Op::RowSoftmax(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::row_vector(vec![self.value(a).sum()]);
        self.push(v, Op::Sum(a))
    }

    /// Weighted cross entropy of row-wise softmax against integer targets:
    /// `-Σ_t w_t · log softmax(logits_t)[target_t]`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        weights: &[f64],
    ) -> Result<NodeId> {
        let (rows, cols) = self.shape(logits);
        if targets.len() != rows || weights.len() != rows {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                left: (rows, cols),
                right: (targets.len(), weights.len()),
            });
        }
        let mut grad = self.value(logits).clone();
        let mut loss = 0.0;
        for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            if t >= cols {
                return Err(Error::Dimension {
                    op: "softmax_cross_entropy",
                    left: (rows, cols),
                    right: (r, t),
                });
            }
            let row = grad.row_mut(r);
            let lse = log_sum_exp(row);
            loss -= w * (row[t] - lse);
            for x in row.iter_mut() {
                *x = w * (*x - lse).exp();
            }
            row[t] -= w;
        }
        Ok(self.push(
            Tensor::row_vector(vec![loss]),
            Op::SoftmaxXent { logits, grad },
        ))
    }

    /// Negative log-likelihood of `gold` under a linear-chain CRF with the
    /// given n×k emission scores and (k+2)×(k+2) transitions (START = k,
    /// STOP = k+1).
    pub fn crf_nll(
        &mut self,
        emissions: NodeId,
        transitions: NodeId,
        gold: &[usize],
    ) -> Result<NodeId> {
        let out = crf::nll_and_grads(self.value(emissions), self.value(transitions), gold)?;
        Ok(self.push(
            Tensor::row_vector(vec![out.nll]),
            Op::CrfNll {
                emissions,
                transitions,
                grad_emissions: out.grad_emissions,
                grad_transitions: out.grad_transitions,
            },
        ))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward_nodes(&self, loss: NodeId) -> Result<NodeGrads> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage(
                "backward called on a node that was never recorded by a forward pass".into(),
            ));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(NodeGrads(grads))
    }

    /// Runs the backward sweep and accumulates (`+=`) parameter gradients
    /// into `store`.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<NodeGrads> {
        let grads = self.backward_nodes(loss)?;
        for (&pid, &node) in &self.params {
            if let Some(g) = grads.get(node) {
                store.get_mut(pid).grad.add_assign(g)?;
            }
        }
        Ok(grads)
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = slot(grads, *a, va.shape());
                matmul_nt_acc(g, vb, ga);
                let gb = slot(grads, *b, vb.shape());
                matmul_tn_acc(va, g, gb);
            }
            Op::Add(a, b) => {
                acc(grads, *a, g);
                acc(grads, *b, g);
            }
            Op::AddRow(a, row) => {
                acc(grads, *a, g);
                let gr = slot(grads, *row, (1, g.cols()));
                for r in 0..g.rows() {
                    for (x, y) in gr.data_mut().iter_mut().zip(g.row(r)) {
                        *x += y;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = slot(grads, *a, va.shape());
                for ((x, gv), bv) in ga.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                    *x += gv * bv;
                }
                let gb = slot(grads, *b, vb.shape());
                for ((x, gv), av) in gb.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                    *x += gv * av;
                }
            }
            Op::Scale(a, c) => {
                let ga = slot(grads, *a, g.shape());
                for (x, gv) in ga.data_mut().iter_mut().zip(g.data()) {
                    *x += c * gv;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    let gp = slot(grads, p, (rows, cols));
                    for r in 0..rows {
                        for (x, y) in gp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + cols]) {
                            *x += y;
                        }
                    }
                    off += cols;
                }
            }
            Op::StackRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    let gp = slot(grads, p, (rows, cols));
                    let src = &g.data()[off * cols..(off + rows) * cols];
                    for (x, y) in gp.data_mut().iter_mut().zip(src) {
                        *x += y;
                    }
                    off += rows;
                }
            }
            Op::Row(a, r) => {
                let shape = self.shape(*a);
                let ga = slot(grads, *a, shape);
                for (x, y) in ga.row_mut(*r).iter_mut().zip(g.data()) {
                    *x += y;
                }
            }
            Op::SliceCols(a, start) => {
                let shape = self.shape(*a);
                let ga = slot(grads, *a, shape);
                for r in 0..g.rows() {
                    for (x, y) in ga.row_mut(r)[*start..*start + g.cols()]
                        .iter_mut()
                        .zip(g.row(r))
                    {
                        *x += y;
                    }
                }
            }
            Op::GatherRows(table, indices) => {
                let shape = self.shape(*table);
                let gt = slot(grads, *table, shape);
                for (i, &ix) in indices.iter().enumerate() {
                    for (x, y) in gt.row_mut(ix).iter_mut().zip(g.row(i)) {
                        *x += y;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let ga = slot(grads, *a, g.shape());
                for ((x, gv), y) in ga
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(node.value.data())
                {
                    *x += gv * y * (1.0 - y);
                }
            }
            Op::Tanh(a) => {
                let ga = slot(grads, *a, g.shape());
                for ((x, gv), y) in ga
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(node.value.data())
                {
                    *x += gv * (1.0 - y * y);
                }
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                let ga = slot(grads, *a, g.shape());
                for ((x, gv), inp) in ga.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                    if *inp > 0.0 {
                        *x += gv;
                    }
                }
            }
            Op::Dropout(a, mask) => {
                let ga = slot(grads, *a, g.shape());
                for ((x, gv), m) in ga.data_mut().iter_mut().zip(g.data()).zip(mask.data()) {
                    *x += gv * m;
                }
            }
            Op::RowSoftmax(a) => {
                let ga = slot(grads, *a, g.shape());
                for r in 0..g.rows() {
                    let y = node.value.row(r);
                    let gy = g.row(r);
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for ((x, yv), gv) in ga.row_mut(r).iter_mut().zip(y).zip(gy) {
                        *x += yv * (gv - dot);
                    }
                }
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                let ga = slot(grads, *a, self.shape(*a));
                ga.data_mut().iter_mut().for_each(|x| *x += s);
            }
            Op::SoftmaxXent { logits, grad } => {
                let s = g.data()[0];
                let gl = slot(grads, *logits, grad.shape());
                for (x, y) in gl.data_mut().iter_mut().zip(grad.data()) {
                    *x += s * y;
                }
            }
            Op::CrfNll {
                emissions,
                transitions,
                grad_emissions,
                grad_transitions,
            } => {
                let s = g.data()[0];
                let ge = slot(grads, *emissions, grad_emissions.shape());
                for (x, y) in ge.data_mut().iter_mut().zip(grad_emissions.data()) {
                    *x += s * y;
                }
                let gt = slot(grads, *transitions, grad_transitions.shape());
                for (x, y) in gt.data_mut().iter_mut().zip(grad_transitions.data()) {
                    *x += s * y;
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Tensor>], id: NodeId, shape: (usize, usize)) -> &mut Tensor {
    grads[id.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
}

fn acc(grads: &mut [Option<Tensor>], id: NodeId, g: &Tensor) {
    match &mut grads[id.0] {
        Some(t) => {
            for (x, y) in t.data_mut().iter_mut().zip(g.data()) {
                *x += y;
            }
        }
        slot @ None => *slot = Some(g.clone()),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(xs: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::from_vec(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn relu_definition() {
        let mut g = Graph::new();
        let x = g.input(t(1, 3, &[-1.0, 0.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(2, 4));
        let y = g.row_softmax(x);
        assert!(g.value(y).data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::new();
        let x = g.input(t(1, 3, &[1.0, 2.0, 3.0]));
        let y = g.dropout(x, 0.5, false, &mut rng).unwrap();
        assert_eq!(x, y);
        assert!(g.dropout(x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_is_seeded_and_inverted() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut g = Graph::new();
            let x = g.input(Tensor::filled(1, 200, 1.0));
            let y = g.dropout(x, 0.5, true, &mut rng).unwrap();
            g.value(y).clone()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn sum_of_matmul_gradient_is_outer_product() {
        let mut store = ParamStore::new();
        let w = store
            .add("w", t(2, 3, &[0.1, -0.2, 0.3, 0.4, 0.5, -0.6]))
            .unwrap();
        let unused = store.add("unused", Tensor::filled(2, 2, 3.0)).unwrap();
        let mut g = Graph::new();
        let x = g.input(t(1, 2, &[1.5, -2.0]));
        let wn = g.param(&store, w);
        let y = g.matmul(x, wn).unwrap();
        let loss = g.sum(y);
        g.backward(loss, &mut store).unwrap();
        // d/dW_ij sum(x W) = x_i
        assert_eq!(store.grad(w).data(), &[1.5, 1.5, 1.5, -2.0, -2.0, -2.0]);
        assert!(store.grad(unused).data().iter().all(|&v| v == 0.0));

        // Gradients accumulate across backward calls.
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(w).data()[0], 3.0);
    }

    #[test]
    fn scaling_loss_scales_grads() {
        let mut store = ParamStore::new();
        let w = store.add("w", t(1, 3, &[0.3, -0.7, 1.1])).unwrap();
        let grad_for = |c: f64, store: &mut ParamStore| {
            store.zero_grads();
            let mut g = Graph::new();
            let wn = g.param(store, w);
            let y = g.tanh(wn);
            let s = g.sum(y);
            let loss = g.scale(s, c);
            g.backward(loss, store).unwrap();
            store.grad(w).clone()
        };
        let base = grad_for(1.0, &mut store);
        let scaled = grad_for(-2.5, &mut store);
        for (a, b) in base.data().iter().zip(scaled.data()) {
            assert!((a * -2.5 - b).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_without_forward_is_usage_error() {
        let g = Graph::new();
        let mut store = ParamStore::new();
        let mut other = Graph::new();
        let n = other.input(Tensor::zeros(1, 1));
        assert!(matches!(g.backward(n, &mut store), Err(Error::Usage(_))));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let n = g.input(Tensor::zeros(1, 2));
        assert!(matches!(g.backward_nodes(n), Err(Error::Usage(_))));
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
