//! Reverse-mode differentiation on a tape of dense-matrix operations.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and [`Graph::backward`] is a single reverse sweep.
//! Only nodes downstream of an [`input`](Graph::input) carry gradients;
//! everything built purely from constants is skipped during the sweep.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::array::DenseArray;
use crate::dist::{self, check_groups, ln_clamped, PROB_FLOOR};
use crate::error::GraphError;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Silu(Var),
    Square(Var),
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    Slice { src: Var, start: usize },
    Sum(Var),
    SumCols(Var),
    MeanRows(Var),
    Softmax { src: Var, classes: usize },
    LogSoftmax { src: Var, classes: usize },
    StraightThrough { logits: Var, probs: Vec<f64>, classes: usize },
    Kl { q: Var, p: Var, q_probs: Vec<f64>, p_probs: Vec<f64>, classes: usize },
    Entropy { src: Var, probs: Vec<f64>, classes: usize },
    BceLogits { src: Var, target: Vec<f64> },
    ClampMin { src: Var, floor: f64 },
    MulConst { src: Var, factor: Vec<f64> },
}

struct Node {
    value: DenseArray,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `softplus(l) − y·l`, the Bernoulli negative log-likelihood with logit `l`.
#[inline]
fn bce(l: f64, y: f64) -> f64 {
    let abs = if l < 0.0 { -l } else { l };
    (if l > 0.0 { l } else { 0.0 }) - y * l + libm::log1p(libm::exp(-abs))
}

/// Jacobian-vector product of a grouped softmax: `y_k (g_k − Σ_c y_c g_c)`.
fn softmax_backward(probs: &[f64], upstream: &[f64], classes: usize, out: &mut [f64]) {
    for ((y, g), o) in probs
        .chunks_exact(classes)
        .zip(upstream.chunks_exact(classes))
        .zip(out.chunks_exact_mut(classes))
    {
        let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
        for k in 0..classes {
            o[k] += y[k] * (g[k] - dot);
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(256) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DenseArray, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, needs_grad, op });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf whose gradient is tracked.
    pub fn input(&mut self, value: DenseArray) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: DenseArray) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v`'s current value as a constant (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &DenseArray {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> GraphError {
        GraphError::ShapeMismatch { op, lhs: self.shape(a), rhs: self.shape(b) }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        let (r, k) = self.shape(a);
        let (k2, c) = self.shape(b);
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; r * c];
        {
            let av = self.nodes[a.0].value.data();
            let bv = self.nodes[b.0].value.data();
            for i in 0..r {
                let orow = &mut out[i * c..(i + 1) * c];
                for p in 0..k {
                    let x = av[i * k + p];
                    if x == 0.0 {
                        continue;
                    }
                    let brow = &bv[p * c..(p + 1) * c];
                    for (o, &w) in orow.iter_mut().zip(brow) {
                        *o += x * w;
                    }
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(DenseArray::new(r, c, out), Op::MatMul(a, b), ng))
    }

    /// `a + bias`, with a `1 × c` bias broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, GraphError> {
        let (r, c) = self.shape(a);
        if self.shape(bias) != (1, c) {
            return Err(self.mismatch("add_row", a, bias));
        }
        let mut out = self.nodes[a.0].value.clone();
        let bv = self.nodes[bias.0].value.data();
        for i in 0..r {
            for (o, &b) in out.row_mut(i).iter_mut().zip(bv) {
                *o += b;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        Ok(self.push(out, Op::AddRow(a, bias), ng))
    }

    /// Linear map `x · w + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, GraphError> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, GraphError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(name, a, b));
        }
        let (r, c) = self.shape(a);
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(DenseArray::new(r, c, data), op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.zip_op("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map_op(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        let data = self.nodes[a.0].value.data().iter().map(|&x| f(x)).collect();
        let ng = self.ng(a);
        self.push(DenseArray::new(r, c, data), op, ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map_op(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map_op(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map_op(a, libm::tanh, Op::Tanh(a))
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        self.map_op(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map_op(a, |x| x * x, Op::Square(a))
    }

    /// `max(floor, x)` elementwise; no gradient flows where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.map_op(a, |x| if x > floor { x } else { floor }, Op::ClampMin { src: a, floor })
    }

    /// Elementwise product with a constant array of the same shape.
    pub fn mul_const(&mut self, a: Var, factor: &DenseArray) -> Result<Var, GraphError> {
        if self.shape(a) != factor.shape() {
            return Err(GraphError::ShapeMismatch {
                op: "mul_const",
                lhs: self.shape(a),
                rhs: factor.shape(),
            });
        }
        let (r, c) = self.shape(a);
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(factor.data())
            .map(|(x, y)| x * y)
            .collect();
        let ng = self.ng(a);
        Ok(self.push(
            DenseArray::new(r, c, data),
            Op::MulConst { src: a, factor: factor.data().to_vec() },
            ng,
        ))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, GraphError> {
        let first = *parts.first().ok_or(GraphError::EmptyConcat)?;
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(self.mismatch("concat", first, p));
            }
            cols += self.shape(p).1;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row(i));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(DenseArray::new(rows, cols, data), Op::Concat(parts.to_vec()), ng))
    }

    /// Row-wise stacking of inputs with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, GraphError> {
        let first = *parts.first().ok_or(GraphError::EmptyConcat)?;
        let cols = self.shape(first).1;
        let mut rows = 0;
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(self.mismatch("concat_rows", first, p));
            }
            rows += self.shape(p).0;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.nodes[p.0].value.data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(DenseArray::new(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Columns `start .. start + len`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, GraphError> {
        let (r, c) = self.shape(a);
        if len == 0 || start + len > c {
            return Err(GraphError::ShapeMismatch { op: "slice", lhs: (r, c), rhs: (start, len) });
        }
        let src = &self.nodes[a.0].value;
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src.row(i)[start..start + len]);
        }
        let ng = self.ng(a);
        Ok(self.push(DenseArray::new(r, len, data), Op::Slice { src: a, start }, ng))
    }

    /// Sum of all entries as a `1 × 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        let ng = self.ng(a);
        self.push(DenseArray::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums as an `r × 1` node.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let data = (0..v.rows()).map(|i| v.row(i).iter().sum()).collect();
        let r = v.rows();
        let ng = self.ng(a);
        self.push(DenseArray::new(r, 1, data), Op::SumCols(a), ng)
    }

    /// Column means as a `1 × c` node.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let (r, c) = v.shape();
        let mut data = vec![0.0; c];
        for i in 0..r {
            for (d, x) in data.iter_mut().zip(v.row(i)) {
                *d += x;
            }
        }
        for d in data.iter_mut() {
            *d /= r as f64;
        }
        let ng = self.ng(a);
        self.push(DenseArray::new(1, c, data), Op::MeanRows(a), ng)
    }

    pub fn softmax(&mut self, logits: Var, groups: usize) -> Result<Var, GraphError> {
        let (r, c) = self.shape(logits);
        let classes = check_groups(c, groups)?;
        let mut out = DenseArray::zeros(r, c);
        dist::softmax_groups(self.nodes[logits.0].value.data(), classes, out.data_mut());
        let ng = self.ng(logits);
        Ok(self.push(out, Op::Softmax { src: logits, classes }, ng))
    }

    pub fn log_softmax(&mut self, logits: Var, groups: usize) -> Result<Var, GraphError> {
        let (r, c) = self.shape(logits);
        let classes = check_groups(c, groups)?;
        let mut out = DenseArray::zeros(r, c);
        dist::log_softmax_groups(self.nodes[logits.0].value.data(), classes, out.data_mut());
        let ng = self.ng(logits);
        Ok(self.push(out, Op::LogSoftmax { src: logits, classes }, ng))
    }

    /// One-hot sample per group; the backward pass treats the output as the
    /// softmax probabilities (straight-through estimator).
    pub fn sample_st<R: Rng + ?Sized>(
        &mut self,
        logits: Var,
        groups: usize,
        rng: &mut R,
    ) -> Result<Var, GraphError> {
        let (r, c) = self.shape(logits);
        let classes = check_groups(c, groups)?;
        let mut probs = vec![0.0; r * c];
        dist::softmax_groups(self.nodes[logits.0].value.data(), classes, &mut probs);
        let onehot = dist::sample_groups(&probs, classes, rng);
        let ng = self.ng(logits);
        Ok(self.push(
            DenseArray::new(r, c, onehot),
            Op::StraightThrough { logits, probs, classes },
            ng,
        ))
    }

    /// Per-row `KL(softmax(q) ‖ softmax(p))` summed over groups, as `r × 1`.
    pub fn kl_categorical(&mut self, q: Var, p: Var, groups: usize) -> Result<Var, GraphError> {
        if self.shape(q) != self.shape(p) {
            return Err(self.mismatch("kl_categorical", q, p));
        }
        let (r, c) = self.shape(q);
        let classes = check_groups(c, groups)?;
        let mut q_probs = vec![0.0; r * c];
        let mut p_probs = vec![0.0; r * c];
        dist::softmax_groups(self.nodes[q.0].value.data(), classes, &mut q_probs);
        dist::softmax_groups(self.nodes[p.0].value.data(), classes, &mut p_probs);
        let data = (0..r)
            .map(|i| {
                let row = i * c..(i + 1) * c;
                q_probs[row.clone()]
                    .chunks_exact(classes)
                    .zip(p_probs[row].chunks_exact(classes))
                    .map(|(qg, pg)| dist::kl_probs(qg, pg))
                    .sum()
            })
            .collect();
        let ng = self.ng(q) || self.ng(p);
        Ok(self.push(
            DenseArray::new(r, 1, data),
            Op::Kl { q, p, q_probs, p_probs, classes },
            ng,
        ))
    }

    /// Per-row entropy of `softmax(logits)` summed over groups, as `r × 1`.
    pub fn entropy_categorical(&mut self, logits: Var, groups: usize) -> Result<Var, GraphError> {
        let (r, c) = self.shape(logits);
        let classes = check_groups(c, groups)?;
        let mut probs = vec![0.0; r * c];
        dist::softmax_groups(self.nodes[logits.0].value.data(), classes, &mut probs);
        let data = probs
            .chunks_exact(c)
            .map(|row| row.chunks_exact(classes).map(dist::entropy_probs).sum())
            .collect();
        let ng = self.ng(logits);
        Ok(self.push(
            DenseArray::new(r, 1, data),
            Op::Entropy { src: logits, probs, classes },
            ng,
        ))
    }

    /// Per-row Bernoulli negative log-likelihood of `target` under `sigmoid(logits)`.
    pub fn bce_with_logits(&mut self, logits: Var, target: &DenseArray) -> Result<Var, GraphError> {
        if self.shape(logits) != target.shape() {
            return Err(GraphError::ShapeMismatch {
                op: "bce_with_logits",
                lhs: self.shape(logits),
                rhs: target.shape(),
            });
        }
        let (r, c) = self.shape(logits);
        let lv = self.nodes[logits.0].value.data();
        let data = (0..r)
            .map(|i| {
                let row = i * c..(i + 1) * c;
                lv[row.clone()].iter().zip(&target.data()[row]).map(|(&l, &y)| bce(l, y)).sum()
            })
            .collect();
        let ng = self.ng(logits);
        Ok(self.push(
            DenseArray::new(r, 1, data),
            Op::BceLogits { src: logits, target: target.data().to_vec() },
            ng,
        ))
    }

    /// Populates `∂loss/∂node` for every node that depends on an input.
    pub fn backward(&mut self, loss: Var) -> Result<(), GraphError> {
        if self.shape(loss) != (1, 1) {
            return Err(GraphError::NonScalarLoss(self.shape(loss)));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = node.grad.as_deref() else { continue };
            propagate(before, node, g);
        }
        Ok(())
    }
}

/// Gradient buffer of `v`, allocated on first use. `None` if `v` is constant.
fn slot(nodes: &mut [Node], v: Var) -> Option<&mut [f64]> {
    slot_with_value(nodes, v).map(|(_, g)| g)
}

/// `v`'s value alongside its gradient buffer.
fn slot_with_value(nodes: &mut [Node], v: Var) -> Option<(&DenseArray, &mut [f64])> {
    let n = &mut nodes[v.0];
    if !n.needs_grad {
        return None;
    }
    let len = n.value.len();
    let grad = n.grad.get_or_insert_with(|| vec![0.0; len]).as_mut_slice();
    Some((&n.value, grad))
}

/// Value of `src` alongside the gradient buffer of a different node `dst`.
fn cross_slot(nodes: &mut [Node], src: Var, dst: Var) -> Option<(&DenseArray, &mut [f64])> {
    debug_assert_ne!(src, dst);
    if !nodes[dst.0].needs_grad {
        return None;
    }
    let (lo, hi) = (src.0.min(dst.0), src.0.max(dst.0));
    let (head, tail) = nodes.split_at_mut(hi);
    let (src_node, dst_node) = if src.0 < dst.0 {
        (&head[lo], &mut tail[0])
    } else {
        (&tail[0], &mut head[lo])
    };
    let len = dst_node.value.len();
    let grad = dst_node.grad.get_or_insert_with(|| vec![0.0; len]).as_mut_slice();
    Some((&src_node.value, grad))
}

fn propagate(nodes: &mut [Node], node: &Node, g: &[f64]) {
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if a == b {
                // x·x only arises for square x; copy to untangle the borrow.
                let xv = nodes[a.0].value.clone();
                matmul_grad_lhs(&xv, g, slot(nodes, *a), out.cols());
                matmul_grad_rhs(&xv, g, slot(nodes, *a), out.cols());
            } else {
                if let Some((bv, ga)) = cross_slot(nodes, *b, *a) {
                    matmul_grad_lhs(bv, g, Some(ga), out.cols());
                }
                if let Some((av, gb)) = cross_slot(nodes, *a, *b) {
                    matmul_grad_rhs(av, g, Some(gb), out.cols());
                }
            }
        }
        Op::AddRow(a, b) => {
            let c = out.cols();
            if let Some(ga) = slot(nodes, *a) {
                add_into(ga, g);
            }
            if let Some(gb) = slot(nodes, *b) {
                for row in g.chunks_exact(c) {
                    add_into(gb, row);
                }
            }
        }
        Op::Add(a, b) => {
            if let Some(ga) = slot(nodes, *a) {
                add_into(ga, g);
            }
            if let Some(gb) = slot(nodes, *b) {
                add_into(gb, g);
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = slot(nodes, *a) {
                add_into(ga, g);
            }
            if let Some(gb) = slot(nodes, *b) {
                for (d, x) in gb.iter_mut().zip(g) {
                    *d -= x;
                }
            }
        }
        Op::Mul(a, b) => {
            if a == b {
                if let Some((xv, ga)) = slot_with_value(nodes, *a) {
                    for ((d, x), y) in ga.iter_mut().zip(g).zip(xv.data()) {
                        *d += 2.0 * x * y;
                    }
                }
            } else {
                if let Some((bv, ga)) = cross_slot(nodes, *b, *a) {
                    for ((d, x), y) in ga.iter_mut().zip(g).zip(bv.data()) {
                        *d += x * y;
                    }
                }
                if let Some((av, gb)) = cross_slot(nodes, *a, *b) {
                    for ((d, x), y) in gb.iter_mut().zip(g).zip(av.data()) {
                        *d += x * y;
                    }
                }
            }
        }
        Op::Scale(a, k) => {
            if let Some(ga) = slot(nodes, *a) {
                for (d, x) in ga.iter_mut().zip(g) {
                    *d += x * k;
                }
            }
        }
        Op::Sigmoid(a) => {
            if let Some(ga) = slot(nodes, *a) {
                for ((d, x), y) in ga.iter_mut().zip(g).zip(out.data()) {
                    *d += x * y * (1.0 - y);
                }
            }
        }
        Op::Tanh(a) => {
            if let Some(ga) = slot(nodes, *a) {
                for ((d, x), y) in ga.iter_mut().zip(g).zip(out.data()) {
                    *d += x * (1.0 - y * y);
                }
            }
        }
        Op::Silu(a) => {
            if let Some((input, ga)) = slot_with_value(nodes, *a) {
                for ((d, x), &v) in ga.iter_mut().zip(g).zip(input.data()) {
                    let s = sigmoid(v);
                    *d += x * s * (1.0 + v * (1.0 - s));
                }
            }
        }
        Op::Square(a) => {
            if let Some((input, ga)) = slot_with_value(nodes, *a) {
                for ((d, x), v) in ga.iter_mut().zip(g).zip(input.data()) {
                    *d += 2.0 * x * v;
                }
            }
        }
        Op::ClampMin { src, floor } => {
            if let Some((input, ga)) = slot_with_value(nodes, *src) {
                for ((d, x), v) in ga.iter_mut().zip(g).zip(input.data()) {
                    if *v > *floor {
                        *d += x;
                    }
                }
            }
        }
        Op::MulConst { src, factor } => {
            if let Some(ga) = slot(nodes, *src) {
                for ((d, x), f) in ga.iter_mut().zip(g).zip(factor) {
                    *d += x * f;
                }
            }
        }
        Op::Concat(parts) => {
            let rows = out.rows();
            let total = out.cols();
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p.0].value.cols();
                if let Some(gp) = slot(nodes, p) {
                    for i in 0..rows {
                        add_into(
                            &mut gp[i * w..(i + 1) * w],
                            &g[i * total + offset..i * total + offset + w],
                        );
                    }
                }
                offset += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = nodes[p.0].value.len();
                if let Some(gp) = slot(nodes, p) {
                    add_into(gp, &g[offset..offset + n]);
                }
                offset += n;
            }
        }
        Op::Slice { src, start } => {
            let (rows, len) = out.shape();
            let c = nodes[src.0].value.cols();
            if let Some(gs) = slot(nodes, *src) {
                for i in 0..rows {
                    add_into(
                        &mut gs[i * c + start..i * c + start + len],
                        &g[i * len..(i + 1) * len],
                    );
                }
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = slot(nodes, *a) {
                for d in ga.iter_mut() {
                    *d += g[0];
                }
            }
        }
        Op::SumCols(a) => {
            let c = nodes[a.0].value.cols();
            if let Some(ga) = slot(nodes, *a) {
                for (row, gi) in ga.chunks_exact_mut(c).zip(g) {
                    for d in row {
                        *d += gi;
                    }
                }
            }
        }
        Op::MeanRows(a) => {
            let (r, c) = nodes[a.0].value.shape();
            if let Some(ga) = slot(nodes, *a) {
                for row in ga.chunks_exact_mut(c) {
                    for (d, gi) in row.iter_mut().zip(g) {
                        *d += gi / r as f64;
                    }
                }
            }
        }
        Op::Softmax { src, classes } => {
            if let Some(ga) = slot(nodes, *src) {
                softmax_backward(out.data(), g, *classes, ga);
            }
        }
        Op::LogSoftmax { src, classes } => {
            if let Some(ga) = slot(nodes, *src) {
                for ((y, gg), o) in out
                    .data()
                    .chunks_exact(*classes)
                    .zip(g.chunks_exact(*classes))
                    .zip(ga.chunks_exact_mut(*classes))
                {
                    let total: f64 = gg.iter().sum();
                    for k in 0..*classes {
                        o[k] += gg[k] - libm::exp(y[k]) * total;
                    }
                }
            }
        }
        Op::StraightThrough { logits, probs, classes } => {
            if let Some(ga) = slot(nodes, *logits) {
                softmax_backward(probs, g, *classes, ga);
            }
        }
        Op::Kl { q, p, q_probs, p_probs, classes } => {
            let c = q_probs.len() / out.rows();
            if nodes[q.0].needs_grad {
                let mut dq = vec![0.0; q_probs.len()];
                for (i, gi) in g.iter().enumerate() {
                    for j in i * c..(i + 1) * c {
                        let (qc, pc) = (q_probs[j], p_probs[j]);
                        let active = if qc > PROB_FLOOR { 1.0 } else { 0.0 };
                        dq[j] = gi * (ln_clamped(qc) - ln_clamped(pc) + active);
                    }
                }
                softmax_backward(q_probs, &dq, *classes, slot(nodes, *q).unwrap());
            }
            if nodes[p.0].needs_grad {
                let mut dp = vec![0.0; p_probs.len()];
                for (i, gi) in g.iter().enumerate() {
                    for j in i * c..(i + 1) * c {
                        let pc = p_probs[j];
                        if pc > PROB_FLOOR {
                            dp[j] = -gi * q_probs[j] / pc;
                        }
                    }
                }
                softmax_backward(p_probs, &dp, *classes, slot(nodes, *p).unwrap());
            }
        }
        Op::Entropy { src, probs, classes } => {
            if let Some(ga) = slot(nodes, *src) {
                let c = probs.len() / out.rows();
                let mut dp = vec![0.0; probs.len()];
                for (i, gi) in g.iter().enumerate() {
                    for j in i * c..(i + 1) * c {
                        let pc = probs[j];
                        let active = if pc > PROB_FLOOR { 1.0 } else { 0.0 };
                        dp[j] = -gi * (ln_clamped(pc) + active);
                    }
                }
                softmax_backward(probs, &dp, *classes, ga);
            }
        }
        Op::BceLogits { src, target } => {
            let c = target.len() / out.rows();
            if let Some((logits, ga)) = slot_with_value(nodes, *src) {
                for (j, (d, &l)) in ga.iter_mut().zip(logits.data()).enumerate() {
                    *d += g[j / c] * (sigmoid(l) - target[j]);
                }
            }
        }
    }
}

/// `dA += dC · Bᵀ`
fn matmul_grad_lhs(b: &DenseArray, g: &[f64], ga: Option<&mut [f64]>, c: usize) {
    let Some(ga) = ga else { return };
    let k = b.rows();
    let bv = b.data();
    for (grow, arow) in g.chunks_exact(c).zip(ga.chunks_exact_mut(k)) {
        for (p, d) in arow.iter_mut().enumerate() {
            let brow = &bv[p * c..(p + 1) * c];
            *d += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `dB += Aᵀ · dC`
fn matmul_grad_rhs(a: &DenseArray, g: &[f64], gb: Option<&mut [f64]>, c: usize) {
    let Some(gb) = gb else { return };
    let k = a.cols();
    for (grow, arow) in g.chunks_exact(c).zip(a.data().chunks_exact(k)) {
        for (p, &x) in arow.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (d, &gv) in gb[p * c..(p + 1) * c].iter_mut().zip(grow) {
                *d += x * gv;
            }
        }
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
