//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node in creation order, so the
//! node list is already topologically sorted and `backward` is a single
//! reverse sweep.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::gemm::{gemm_nn, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Activation {
    /// t ↦ cos(b1·t + b2)
    Cosine { b1: f64, b2: f64 },
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, t: f64) -> f64 {
        match self {
            Activation::Cosine { b1, b2 } => (b1 * t + b2).cos(),
            Activation::Relu => t.max(0.0),
            Activation::Tanh => t.tanh(),
        }
    }

    fn derivative(self, t: f64, y: f64) -> f64 {
        match self {
            Activation::Cosine { b1, b2 } => -b1 * (b1 * t + b2).sin(),
            Activation::Relu => {
                if t > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(NodeId, NodeId),
    TransposeLast(NodeId),
    Permute(NodeId, Vec<usize>),
    Reshape(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddBroadcast(NodeId, NodeId),
    MulAxis(NodeId, NodeId, usize),
    BroadcastAxis(NodeId, usize),
    Scale(NodeId, f64),
    Softmax(NodeId),
    Act(NodeId, Activation),
    LayerNorm(NodeId),
    Select(NodeId, usize, usize),
    Gather(NodeId, Vec<usize>),
    SumAxis(NodeId, usize),
    SumAll(NodeId),
    Mse(NodeId, Tensor),
    CrossEntropy(NodeId, Vec<usize>),
}

struct Node {
    op: Op,
    value: Tensor,
}

const LN_EPS: f64 = 1e-5;

/// Gradients of a scalar root with respect to the leaves of a graph.
#[derive(Debug)]
pub struct Gradients {
    by_leaf: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, leaf: NodeId) -> Option<&Tensor> {
        self.by_leaf.get(&leaf)
    }

    /// Gradient of a leaf; panics if the id is not a leaf of the graph.
    pub fn wrt(&self, leaf: NodeId) -> &Tensor {
        self.by_leaf.get(&leaf).expect("not a leaf of this graph")
    }

    pub fn take(&mut self, leaf: NodeId) -> Option<Tensor> {
        self.by_leaf.remove(&leaf)
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

// row-major strides
fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

// (outer, n, inner) around `axis`
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..n {
        out.push(data[src]);
        // increment the multi-index, updating src incrementally
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Constant, t)
    }

    /// Batched product. `a` is `[.., m, k]`; `b` is either `[k, n]` (shared
    /// across the batch) or `[.., k, n]` with the same leading extents.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::dim("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let lead_a = &sa[..sa.len() - 2];
        let lead_b = &sb[..sb.len() - 2];
        if k != k2 || !(lead_b.is_empty() || lead_a == lead_b) {
            return Err(Error::dim("matmul", format!("{sa:?} x {sb:?}")));
        }
        let batch: usize = lead_a.iter().product();
        let shared = lead_b.is_empty();
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; batch * m * n];
        for t in 0..batch {
            let bo = if shared { 0 } else { t * k * n };
            gemm_nn(
                m,
                k,
                n,
                &da[t * m * k..(t + 1) * m * k],
                &db[bo..bo + k * n],
                &mut out[t * m * n..(t + 1) * m * n],
            );
        }
        let mut shape = lead_a.to_vec();
        shape.extend([m, n]);
        let v = Tensor::new(shape, out)?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(Error::dim("transpose", "rank < 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        let (shape, data) = permute_data(self.value(a).data(), self.shape(a), &perm);
        let v = Tensor::new(shape, data)?;
        Ok(self.push(Op::TransposeLast(a), v))
    }

    pub fn permute(&mut self, a: NodeId, perm: &[usize]) -> Result<NodeId> {
        let r = self.shape(a).len();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim("permute", format!("bad permutation {perm:?} for rank {r}")));
        }
        let (shape, data) = permute_data(self.value(a).data(), self.shape(a), perm);
        let v = Tensor::new(shape, data)?;
        Ok(self.push(Op::Permute(a, perm.to_vec()), v))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(Op::Reshape(a), v))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_with(self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    /// `a + b` where the shape of `b` is a suffix of the shape of `a`.
    pub fn add_broadcast(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::dim("add_broadcast", format!("{sa:?} + {sb:?}")));
        }
        let inner = self.value(b).len();
        let bd = self.value(b).data().to_vec();
        let mut v = self.value(a).clone();
        for chunk in v.data_mut().chunks_mut(inner.max(1)) {
            for (x, y) in chunk.iter_mut().zip(&bd) {
                *x += y;
            }
        }
        Ok(self.push(Op::AddBroadcast(a, b), v))
    }

    /// Multiplies slice `j` of `a` along `axis` by `v[j]`.
    pub fn mul_axis(&mut self, a: NodeId, v: NodeId, axis: usize) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() || self.shape(v) != [sa[axis]] {
            return Err(Error::dim(
                "mul_axis",
                format!("{sa:?} axis {axis} by {:?}", self.shape(v)),
            ));
        }
        let (outer, n, inner) = split_at_axis(&sa, axis);
        let vd = self.value(v).data().to_vec();
        let mut out = self.value(a).clone();
        let d = out.data_mut();
        for o in 0..outer {
            for j in 0..n {
                let base = (o * n + j) * inner;
                for x in &mut d[base..base + inner] {
                    *x *= vd[j];
                }
            }
        }
        Ok(self.push(Op::MulAxis(a, v, axis), out))
    }

    /// Inserts a new axis of extent `n` at position `axis`, repeating `a`.
    pub fn broadcast_axis(&mut self, a: NodeId, axis: usize, n: usize) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        if axis > sa.len() {
            return Err(Error::dim("broadcast_axis", format!("axis {axis} for {sa:?}")));
        }
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis..].iter().product();
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            for _ in 0..n {
                out.extend_from_slice(&src[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = sa.clone();
        shape.insert(axis, n);
        let v = Tensor::new(shape, out)?;
        Ok(self.push(Op::BroadcastAxis(a, axis), v))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).scale(c);
        self.push(Op::Scale(a, c), v)
    }

    /// Softmax over the last axis, stabilized by subtracting the row max.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let v = softmax_last(self.value(a))?;
        Ok(self.push(Op::Softmax(a), v))
    }

    pub fn activation(&mut self, a: NodeId, kind: Activation) -> NodeId {
        let v = self.value(a).map(|t| kind.apply(t));
        self.push(Op::Act(a, kind), v)
    }

    /// Normalizes each last-axis vector to zero mean and unit variance.
    pub fn layer_norm(&mut self, a: NodeId) -> Result<NodeId> {
        let x = self.value(a);
        let d = *x.shape().last().ok_or_else(|| Error::dim("layer_norm", "scalar input"))?;
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(d) {
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mu) * inv;
            }
        }
        Ok(self.push(Op::LayerNorm(a), out))
    }

    /// Takes index `idx` along `axis`, dropping that axis.
    pub fn select(&mut self, a: NodeId, axis: usize, idx: usize) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() || idx >= sa[axis] {
            return Err(Error::dim("select", format!("index {idx} on axis {axis} of {sa:?}")));
        }
        let (outer, n, inner) = split_at_axis(&sa, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * n + idx) * inner;
            out.extend_from_slice(&src[base..base + inner]);
        }
        let mut shape = sa.clone();
        shape.remove(axis);
        let v = Tensor::new(shape, out)?;
        Ok(self.push(Op::Select(a, axis, idx), v))
    }

    /// Rows of a matrix `table` picked by `rows`, giving `[rows.len(), cols]`.
    pub fn gather_rows(&mut self, table: NodeId, rows: &[usize]) -> Result<NodeId> {
        let (r, c) = self.value(table).dims2()?;
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(Error::dim("gather_rows", format!("row {i} of {r}")));
            }
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let v = Tensor::new(vec![rows.len(), c], out)?;
        Ok(self.push(Op::Gather(table, rows.to_vec()), v))
    }

    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() {
            return Err(Error::dim("sum_axis", format!("axis {axis} of {sa:?}")));
        }
        let (outer, n, inner) = split_at_axis(&sa, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let base = (o * n + j) * inner;
                for (t, x) in out[o * inner..(o + 1) * inner].iter_mut().zip(&src[base..base + inner]) {
                    *t += x;
                }
            }
        }
        let mut shape = sa.clone();
        shape.remove(axis);
        let v = Tensor::new(shape, out)?;
        Ok(self.push(Op::SumAxis(a, axis), v))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::SumAll(a), v)
    }

    /// Mean squared error against a fixed target of the same shape.
    pub fn mse(&mut self, pred: NodeId, target: &Tensor) -> Result<NodeId> {
        if self.shape(pred) != target.shape() {
            return Err(Error::dim(
                "mse",
                format!("{:?} vs {:?}", self.shape(pred), target.shape()),
            ));
        }
        let p = self.value(pred);
        let n = p.len().max(1) as f64;
        let l = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        Ok(self.push(Op::Mse(pred, target.clone()), Tensor::scalar(l)))
    }

    /// Mean cross-entropy of `[batch, classes]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (b, c) = self.value(logits).dims2()?;
        if targets.len() != b || targets.iter().any(|&t| t >= c) {
            return Err(Error::dim("cross_entropy", format!("{b}x{c} logits, targets {targets:?}")));
        }
        let x = self.value(logits);
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = x.row(i);
            total += log_sum_exp(row) - row[t];
        }
        let l = total / b as f64;
        Ok(self.push(Op::CrossEntropy(logits, targets.to_vec()), Tensor::scalar(l)))
    }

    /// Reverse sweep from a scalar root. A graph can be differentiated once.
    pub fn backward(&mut self, root: NodeId) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Contract("backward already ran on this graph".into()));
        }
        if self.value(root).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(self.shape(root), 1.0));
        let mut leaves = HashMap::new();

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else {
                if matches!(self.nodes[i].op, Op::Leaf) {
                    leaves.insert(NodeId(i), Tensor::zeros(self.nodes[i].value.shape()));
                }
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    leaves.insert(NodeId(i), g);
                }
                Op::Constant => {}
                Op::MatMul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let sa = va.shape();
                    let sb = vb.shape();
                    let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                    let n = sb[sb.len() - 1];
                    let batch = va.len() / (m * k);
                    let shared = sb.len() == 2;
                    let mut ga = vec![0.0; va.len()];
                    let mut gb = vec![0.0; vb.len()];
                    let gd = g.data();
                    for t in 0..batch {
                        let bo = if shared { 0 } else { t * k * n };
                        let gt = &gd[t * m * n..(t + 1) * m * n];
                        gemm_nt(m, n, k, gt, &vb.data()[bo..bo + k * n], &mut ga[t * m * k..(t + 1) * m * k]);
                        gemm_tn(m, k, n, &va.data()[t * m * k..(t + 1) * m * k], gt, &mut gb[bo..bo + k * n]);
                    }
                    let (sa, sb) = (sa.to_vec(), sb.to_vec());
                    accumulate(&mut grads, *a, Tensor::new(sa, ga)?);
                    accumulate(&mut grads, *b, Tensor::new(sb, gb)?);
                }
                Op::TransposeLast(a) => {
                    let r = g.rank();
                    let mut perm: Vec<usize> = (0..r).collect();
                    perm.swap(r - 2, r - 1);
                    let (shape, data) = permute_data(g.data(), g.shape(), &perm);
                    accumulate(&mut grads, *a, Tensor::new(shape, data)?);
                }
                Op::Permute(a, perm) => {
                    let mut inv = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inv[p] = i;
                    }
                    let (shape, data) = permute_data(g.data(), g.shape(), &inv);
                    accumulate(&mut grads, *a, Tensor::new(shape, data)?);
                }
                Op::Reshape(a) => {
                    let shape = self.nodes[a.0].value.shape().to_vec();
                    accumulate(&mut grads, *a, g.reshape(&shape)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_with(&self.nodes[b.0].value, |x, y| x * y)?;
                    let gb = g.zip_with(&self.nodes[a.0].value, |x, y| x * y)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddBroadcast(a, b) => {
                    let sb = self.nodes[b.0].value.shape().to_vec();
                    let inner: usize = sb.iter().product();
                    let mut gb = vec![0.0; inner];
                    for chunk in g.data().chunks(inner.max(1)) {
                        for (t, x) in gb.iter_mut().zip(chunk) {
                            *t += x;
                        }
                    }
                    accumulate(&mut grads, *b, Tensor::new(sb, gb)?);
                    accumulate(&mut grads, *a, g);
                }
                Op::MulAxis(a, v, axis) => {
                    let va = &self.nodes[a.0].value;
                    let vv = self.nodes[v.0].value.data();
                    let (outer, n, inner) = split_at_axis(va.shape(), *axis);
                    let mut ga = g.clone();
                    let mut gv = vec![0.0; n];
                    let (gd, ad) = (g.data(), va.data());
                    let gad = ga.data_mut();
                    for o in 0..outer {
                        for j in 0..n {
                            let base = (o * n + j) * inner;
                            for t in base..base + inner {
                                gv[j] += gd[t] * ad[t];
                                gad[t] *= vv[j];
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *v, Tensor::vector(gv));
                }
                Op::BroadcastAxis(a, axis) => {
                    let sa = self.nodes[a.0].value.shape().to_vec();
                    let outer: usize = sa[..*axis].iter().product();
                    let inner: usize = sa[*axis..].iter().product();
                    let n = g.shape()[*axis];
                    let mut out = vec![0.0; outer * inner];
                    let gd = g.data();
                    for o in 0..outer {
                        for r in 0..n {
                            let base = (o * n + r) * inner;
                            for (t, x) in out[o * inner..(o + 1) * inner].iter_mut().zip(&gd[base..base + inner]) {
                                *t += x;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(sa, out)?);
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, g.scale(*c));
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let d = *y.shape().last().unwrap_or(&1);
                    let mut gx = g.clone();
                    for (gr, yr) in gx.data_mut().chunks_mut(d).zip(y.data().chunks(d)) {
                        let s: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for (gv, yv) in gr.iter_mut().zip(yr) {
                            *gv = yv * (*gv - s);
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::Act(a, kind) => {
                    let x = &self.nodes[a.0].value;
                    let mut gx = g.clone();
                    for ((gv, &t), &y) in gx.data_mut().iter_mut().zip(x.data()).zip(node.value.data()) {
                        *gv *= kind.derivative(t, y);
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::LayerNorm(a) => {
                    let x = &self.nodes[a.0].value;
                    let y = &node.value;
                    let d = *y.shape().last().unwrap_or(&1);
                    let mut gx = g.clone();
                    for ((gr, yr), xr) in gx
                        .data_mut()
                        .chunks_mut(d)
                        .zip(y.data().chunks(d))
                        .zip(x.data().chunks(d))
                    {
                        let mu = xr.iter().sum::<f64>() / d as f64;
                        let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
                        let inv = 1.0 / (var + LN_EPS).sqrt();
                        let mg = gr.iter().sum::<f64>() / d as f64;
                        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for (gv, yv) in gr.iter_mut().zip(yr) {
                            *gv = inv * (*gv - mg - yv * mgy);
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::Select(a, axis, idx) => {
                    let sa = self.nodes[a.0].value.shape().to_vec();
                    let (outer, n, inner) = split_at_axis(&sa, *axis);
                    let mut out = vec![0.0; outer * n * inner];
                    for o in 0..outer {
                        let base = (o * n + idx) * inner;
                        out[base..base + inner].copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                    }
                    accumulate(&mut grads, *a, Tensor::new(sa, out)?);
                }
                Op::Gather(table, rows) => {
                    let st = self.nodes[table.0].value.shape().to_vec();
                    let c = st[1];
                    let mut out = vec![0.0; st[0] * c];
                    for (r, &i) in rows.iter().enumerate() {
                        for (t, x) in out[i * c..(i + 1) * c].iter_mut().zip(g.row(r)) {
                            *t += x;
                        }
                    }
                    accumulate(&mut grads, *table, Tensor::new(st, out)?);
                }
                Op::SumAxis(a, axis) => {
                    let sa = self.nodes[a.0].value.shape().to_vec();
                    let (outer, n, inner) = split_at_axis(&sa, *axis);
                    let mut out = Vec::with_capacity(outer * n * inner);
                    for o in 0..outer {
                        for _ in 0..n {
                            out.extend_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(sa, out)?);
                }
                Op::SumAll(a) => {
                    let s = self.nodes[a.0].value.shape();
                    accumulate(&mut grads, *a, Tensor::full(s, g.item()));
                }
                Op::Mse(p, target) => {
                    let pv = &self.nodes[p.0].value;
                    let n = pv.len().max(1) as f64;
                    let c = 2.0 * g.item() / n;
                    let gp = pv.zip_with(target, |a, b| c * (a - b))?;
                    accumulate(&mut grads, *p, gp);
                }
                Op::CrossEntropy(l, targets) => {
                    let lv = &self.nodes[l.0].value;
                    let mut gl = softmax_last(lv)?;
                    let (b, c) = lv.dims2()?;
                    let scale = g.item() / b as f64;
                    let d = gl.data_mut();
                    for (i, &t) in targets.iter().enumerate() {
                        d[i * c + t] -= 1.0;
                    }
                    for x in d.iter_mut() {
                        *x *= scale;
                    }
                    accumulate(&mut grads, *l, gl);
                }
            }
        }
        Ok(Gradients { by_leaf: leaves })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign_scaled(&g, 1.0),
        slot => *slot = Some(g),
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let d = *x
        .shape()
        .last()
        .ok_or_else(|| Error::dim("softmax", "scalar input"))?;
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(d.max(1)) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    /// Central-difference check of d(root)/d(leaf) for a graph builder.
    fn fd_check<F>(inputs: &[Tensor], build: F) -> f64
    where
        F: Fn(&mut Graph, &[NodeId]) -> NodeId,
    {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let root = build(&mut g, &ids);
        let grads = g.backward(root).unwrap();
        let eval = |xs: &[Tensor]| {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = xs.iter().map(|t| g.leaf(t.clone())).collect();
            let r = build(&mut g, &ids);
            g.value(r).item()
        };
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for (li, t) in inputs.iter().enumerate() {
            for j in 0..t.len() {
                let mut plus = inputs.to_vec();
                plus[li].data_mut()[j] += h;
                let mut minus = inputs.to_vec();
                minus[li].data_mut()[j] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let an = grads.wrt(ids[li]).data()[j];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-2);
                worst = worst.max(err);
            }
        }
        worst
    }

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        Tensor::randn(shape, 1.0, &mut Rng::new(seed))
    }

    #[test]
    fn sum_of_leaf_has_unit_gradient() {
        let mut g = Graph::new();
        let w = g.leaf(randn(&[3, 2], 1));
        let s = g.sum(w);
        let gr = g.backward(s).unwrap();
        assert_eq!(gr.wrt(w), &Tensor::ones(&[3, 2]));
    }

    #[test]
    fn second_backward_is_an_error() {
        let mut g = Graph::new();
        let w = g.leaf(randn(&[2], 1));
        let s = g.sum(w);
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Contract(_))));
    }

    #[test]
    fn non_scalar_root_is_an_error() {
        let mut g = Graph::new();
        let w = g.leaf(randn(&[2], 1));
        assert!(matches!(g.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn matmul_sum_gradient_is_ones_times_b_transposed() {
        let a = randn(&[3, 4], 2);
        let b = randn(&[4, 2], 3);
        let mut g = Graph::new();
        let ia = g.leaf(a);
        let ib = g.leaf(b.clone());
        let c = g.matmul(ia, ib).unwrap();
        let s = g.sum(c);
        let gr = g.backward(s).unwrap();
        let want = Tensor::ones(&[3, 2]).matmul(&b.transpose().unwrap()).unwrap();
        assert!(gr.wrt(ia).max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn mse_gradient_matches_closed_form() {
        let x = randn(&[6, 3], 4);
        let w = randn(&[3, 1], 5);
        let y = randn(&[6, 1], 6);
        let mut g = Graph::new();
        let ix = g.constant(x.clone());
        let iw = g.leaf(w.clone());
        let p = g.matmul(ix, iw).unwrap();
        let l = g.mse(p, &y).unwrap();
        let gr = g.backward(l).unwrap();
        let resid = x.matmul(&w).unwrap().sub(&y).unwrap();
        let want = x.transpose().unwrap().matmul(&resid).unwrap().scale(2.0 / 6.0);
        assert!(gr.wrt(iw).max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn softmax_rows() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros(&[2, 3]));
        let s = g.softmax(z).unwrap();
        for v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = g.constant(Tensor::from_rows(&[vec![1000.0, 0.0]]).unwrap());
        let s = g.softmax(big).unwrap();
        assert!((g.value(s).data()[0] - 1.0).abs() < 1e-12);
        assert!(g.value(s).data()[1].abs() < 1e-12);
    }

    #[test]
    fn cosine_activation_degenerate_cases() {
        let mut g = Graph::new();
        let x = g.constant(randn(&[5], 7));
        let y = g.activation(x, Activation::Cosine { b1: 0.0, b2: 0.0 });
        assert!(g.value(y).data().iter().all(|&v| v == 1.0));
        let z = g.constant(Tensor::scalar(0.0));
        let y = g.activation(z, Activation::Cosine { b1: 1.0, b2: 0.0 });
        assert_eq!(g.value(y).item(), 1.0);
    }

    #[test]
    fn finite_differences_for_each_op() {
        for seed in 0..10u64 {
            let a = randn(&[2, 3, 4], 10 + seed);
            let b = randn(&[4, 5], 20 + seed);
            let bb = randn(&[2, 4, 3], 30 + seed);
            let w = randn(&[3, 5], 40 + seed);
            let v = randn(&[3], 50 + seed);
            let checks: Vec<(&str, f64)> = vec![
                ("matmul shared", fd_check(&[a.clone(), b.clone()], |g, x| {
                    let c = g.matmul(x[0], x[1]).unwrap();
                    let c = g.activation(c, Activation::Tanh);
                    g.sum(c)
                })),
                ("matmul batched", fd_check(&[a.clone(), bb.clone()], |g, x| {
                    let c = g.matmul(x[0], x[1]).unwrap();
                    let c = g.activation(c, Activation::Cosine { b1: 0.7, b2: 0.3 });
                    g.sum(c)
                })),
                ("softmax", fd_check(&[a.clone(), w.clone()], |g, x| {
                    let s = g.softmax(x[0]).unwrap();
                    let t = g.transpose(s).unwrap();
                    let r = g.reshape(t, &[8, 3]).unwrap();
                    let m = g.matmul(r, x[1]).unwrap();
                    let m = g.activation(m, Activation::Tanh);
                    g.sum(m)
                })),
                ("layer norm + permute", fd_check(&[a.clone(), v.clone()], |g, x| {
                    let l = g.layer_norm(x[0]).unwrap();
                    let p = g.permute(l, &[1, 0, 2]).unwrap();
                    let m = g.mul_axis(p, x[1], 0).unwrap();
                    let c = g.activation(m, Activation::Cosine { b1: 1.1, b2: 0.2 });
                    g.sum(c)
                })),
                ("broadcast/select/sum_axis", fd_check(&[a.clone(), Tensor::vector(b.data()[..4].to_vec())], |g, x| {
                    let s = g.add_broadcast(x[0], x[1]).unwrap();
                    let e = g.broadcast_axis(s, 1, 2).unwrap();
                    let q = g.mul(e, e).unwrap();
                    let r = g.select(q, 2, 1).unwrap();
                    let t = g.sum_axis(r, 1).unwrap();
                    let t = g.activation(t, Activation::Tanh);
                    g.sum(t)
                })),
                ("gather + cross entropy", fd_check(&[w.clone()], |g, x| {
                    let r = g.gather_rows(x[0], &[2, 0, 2, 1]).unwrap();
                    let r2 = g.scale(r, 1.5);
                    let d = g.sub(r2, r).unwrap();
                    let d2 = g.add(d, r).unwrap();
                    g.cross_entropy(d2, &[0, 4, 1, 3]).unwrap()
                })),
                ("mse", fd_check(&[w.clone()], |g, x| {
                    let t = Tensor::zeros(&[3, 5]);
                    g.mse(x[0], &t).unwrap()
                })),
            ];
            for (name, err) in checks {
                assert!(err < 1e-5, "{name}: rel err {err} (seed {seed})");
            }
        }
    }

    #[test]
    fn relu_gradient_away_from_kink() {
        let mut t = randn(&[20], 99);
        for x in t.data_mut() {
            if x.abs() < 0.1 {
                *x += 0.5;
            }
        }
        let err = fd_check(&[t], |g, x| {
            let r = g.activation(x[0], Activation::Relu);
            let q = g.mul(r, r).unwrap();
            g.sum(q)
        });
        assert!(err < 1e-5);
    }
}
