//! The computation tape: forward primitives and their reverse-mode rules.
//!
//! A [`Tape`] owns every tensor created during one forward pass. Operations
//! append nodes in topological order, so replaying the tape front-to-back
//! reproduces the forward pass bit-for-bit and walking it back-to-front
//! propagates gradients. Parameters live outside the tape and are bound as
//! leaves at the start of each pass; the optimizer owns the zero/step cycle.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Handle to a tensor on a tape.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
    Min,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul {
        a: TensorId,
        b: TensorId,
    },
    Add {
        a: TensorId,
        b: TensorId,
        broadcast: bool,
    },
    Mul {
        a: TensorId,
        b: TensorId,
    },
    Scale {
        a: TensorId,
        c: f64,
    },
    Concat {
        parts: Vec<TensorId>,
        axis: usize,
    },
    Slice {
        a: TensorId,
        axis: usize,
        start: usize,
        end: usize,
    },
    Transpose {
        a: TensorId,
    },
    Relu {
        a: TensorId,
    },
    Sigmoid {
        a: TensorId,
    },
    Tanh {
        a: TensorId,
    },
    Reduce {
        a: TensorId,
        axis: usize,
        kind: ReduceKind,
        /// Flat input index feeding each output element (max/min only).
        winners: Vec<usize>,
    },
    SumAll {
        a: TensorId,
    },
    Dropout {
        a: TensorId,
        /// Inverted-scaling mask: entries are 0 or 1/keep.
        mask: Vec<f64>,
    },
    LayerNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
        inv_std: Vec<f64>,
        normalized: Vec<f64>,
    },
    Softmax {
        a: TensorId,
        axis: usize,
    },
    CrossEntropy {
        logits: TensorId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    GatherRows {
        table: TensorId,
        ids: Vec<usize>,
    },
    ScatterRows {
        table: TensorId,
        rows: TensorId,
        ids: Vec<usize>,
    },
    Reshape {
        a: TensorId,
    },
}

#[derive(Debug)]
struct Node {
    tensor: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

// ---- raw matrix kernels ----------------------------------------------------

/// C[m,n] = A[m,k] @ B[k,n]
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] += a_ip * b_row[j];
            }
        }
    }
    c
}

/// C[m,k] += A[m,n] @ B[k,n]^T
fn matmul_bt_acc(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, c: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for j in 0..n {
                s += a_row[j] * b_row[j];
            }
            c[i * k + p] += s;
        }
    }
}

/// C[k,n] += A[m,k]^T @ B[m,n]
fn matmul_at_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] += a_ip * b_row[j];
            }
        }
    }
}

/// Split a shape into (outer, axis_len, inner) strides around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].tensor.data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].tensor.shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad.as_deref()
    }

    pub fn clear_grad(&mut self, id: TensorId) {
        self.nodes[id.0].tensor.grad = None;
    }

    // ---- leaves -------------------------------------------------------------

    pub fn leaf(&mut self, tensor: Tensor) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            tensor,
            op: Op::Leaf,
        });
        id
    }

    /// Leaf that does not require gradients.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<TensorId> {
        Ok(self.leaf(Tensor::new(shape, data)?))
    }

    pub fn constant_scalar(&mut self, v: f64) -> TensorId {
        self.leaf(Tensor::scalar(v))
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> TensorId {
        self.leaf(Tensor::zeros(shape))
    }

    fn requires_grad_any(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].tensor.requires_grad)
    }

    fn push(&mut self, shape: Vec<usize>, mut op: Op, requires_grad: bool) -> Result<TensorId> {
        let data = eval_op(&self.nodes, &mut op)?
            .expect("push is only called with non-leaf ops");
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            tensor: Tensor {
                shape,
                data,
                requires_grad,
                grad: None,
            },
            op,
        });
        Ok(id)
    }

    // ---- primitives ----------------------------------------------------------

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, ka) = self.tensor(a).dims2().map_err(|_| Error::ShapeMismatch {
            op: "matmul",
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        })?;
        let (kb, n) = self.tensor(b).dims2().map_err(|_| Error::ShapeMismatch {
            op: "matmul",
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        })?;
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, ka],
                rhs: vec![kb, n],
            });
        }
        let rg = self.requires_grad_any(&[a, b]);
        self.push(vec![m, n], Op::MatMul { a, b }, rg)
    }

    /// Elementwise add. The only broadcast allowed is a rank-(r-1) `b` over
    /// the leading dimension of `a` (e.g. adding a bias row to a matrix).
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let broadcast = if sa == sb {
            false
        } else if sa.len() >= 2 && sb[..] == sa[1..] {
            true
        } else {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: sa,
                rhs: sb,
            });
        };
        let rg = self.requires_grad_any(&[a, b]);
        self.push(sa, Op::Add { a, b, broadcast }, rg)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        if sa != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: sa,
                rhs: self.shape(b).to_vec(),
            });
        }
        let rg = self.requires_grad_any(&[a, b]);
        self.push(sa, Op::Mul { a, b }, rg)
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        let rg = self.requires_grad_any(&[a]);
        self.push(sa, Op::Scale { a, c }, rg)
    }

    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::invalid("concat: empty part list"));
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::invalid(format!(
                "concat: axis {axis} out of range for rank {}",
                first.len()
            )));
        }
        let mut out_shape = first.clone();
        for &p in &parts[1..] {
            let sp = self.shape(p);
            if sp.len() != first.len()
                || sp
                    .iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(d, (x, y))| d != axis && x != y)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: sp.to_vec(),
                });
            }
            out_shape[axis] += sp[axis];
        }
        let rg = self.requires_grad_any(parts);
        self.push(
            out_shape,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        )
    }

    /// Contiguous range along `axis`, end exclusive.
    pub fn slice(&mut self, a: TensorId, axis: usize, start: usize, end: usize) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() {
            return Err(Error::invalid(format!(
                "slice: axis {axis} out of range for rank {}",
                sa.len()
            )));
        }
        if start >= end || end > sa[axis] {
            return Err(Error::invalid(format!(
                "slice: range {start}..{end} invalid for axis of size {}",
                sa[axis]
            )));
        }
        let mut out_shape = sa.clone();
        out_shape[axis] = end - start;
        let rg = self.requires_grad_any(&[a]);
        self.push(
            out_shape,
            Op::Slice {
                a,
                axis,
                start,
                end,
            },
            rg,
        )
    }

    pub fn slice_rows(&mut self, a: TensorId, start: usize, end: usize) -> Result<TensorId> {
        self.slice(a, 0, start, end)
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = self.tensor(a).dims2()?;
        let rg = self.requires_grad_any(&[a]);
        self.push(vec![c, r], Op::Transpose { a }, rg)
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        let rg = self.requires_grad_any(&[a]);
        self.push(sa, Op::Relu { a }, rg)
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        let rg = self.requires_grad_any(&[a]);
        self.push(sa, Op::Sigmoid { a }, rg)
    }

    pub fn tanh(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        let rg = self.requires_grad_any(&[a]);
        self.push(sa, Op::Tanh { a }, rg)
    }

    /// Reduce along `axis`; the axis is removed from the shape (a full
    /// reduction of a vector yields shape `[1]`). Max/min ties resolve to the
    /// first occurrence.
    pub fn reduce(&mut self, a: TensorId, axis: usize, kind: ReduceKind) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() {
            return Err(Error::invalid(format!(
                "reduce: axis {axis} out of range for rank {}",
                sa.len()
            )));
        }
        let mut out_shape: Vec<usize> = sa
            .iter()
            .enumerate()
            .filter(|(d, _)| *d != axis)
            .map(|(_, &x)| x)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let rg = self.requires_grad_any(&[a]);
        self.push(
            out_shape,
            Op::Reduce {
                a,
                axis,
                kind,
                winners: Vec::new(),
            },
            rg,
        )
    }

    /// Sum of every element, as a `[1]` scalar.
    pub fn sum_all(&mut self, a: TensorId) -> Result<TensorId> {
        let rg = self.requires_grad_any(&[a]);
        self.push(vec![1], Op::SumAll { a }, rg)
    }

    /// Inverted dropout: at train time surviving entries are scaled by
    /// 1/keep so inference needs no rescale. Rate 0 or `training == false`
    /// is the identity (no node is recorded).
    pub fn dropout(
        &mut self,
        a: TensorId,
        rate: f64,
        training: bool,
        rng: &mut Rng,
    ) -> Result<TensorId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} not in [0,1)")));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.tensor(a).numel())
            .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let sa = self.shape(a).to_vec();
        let rg = self.requires_grad_any(&[a]);
        self.push(sa, Op::Dropout { a, mask }, rg)
    }

    /// Layer normalization over the last axis with learned gain/bias.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().ok_or_else(|| Error::invalid("layer_norm: rank-0 input"))?;
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            let sp = self.shape(p);
            if sp != [d] {
                return Err(Error::ShapeMismatch {
                    op: if name == "gamma" {
                        "layer_norm(gamma)"
                    } else {
                        "layer_norm(beta)"
                    },
                    lhs: sx,
                    rhs: sp.to_vec(),
                });
            }
        }
        let rg = self.requires_grad_any(&[x, gamma, beta]);
        self.push(
            sx,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
                inv_std: Vec::new(),
                normalized: Vec::new(),
            },
            rg,
        )
    }

    /// Numerically stable softmax along `axis`. Rejects non-finite inputs.
    pub fn softmax(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() {
            return Err(Error::invalid(format!(
                "softmax: axis {axis} out of range for rank {}",
                sa.len()
            )));
        }
        if self.values(a).iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("softmax: non-finite input"));
        }
        let rg = self.requires_grad_any(&[a]);
        self.push(sa, Op::Softmax { a, axis }, rg)
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `logits` (shape `[b, classes]`).
    pub fn cross_entropy(&mut self, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
        let (b, classes) = self.tensor(logits).dims2()?;
        if labels.len() != b {
            return Err(Error::invalid(format!(
                "cross_entropy: {b} logit rows but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!(
                "cross_entropy: label {bad} out of range for {classes} classes"
            )));
        }
        let rg = self.requires_grad_any(&[logits]);
        self.push(
            vec![1],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs: Vec::new(),
            },
            rg,
        )
    }

    /// Copy `table` rows at `ids`; gradient flows only into the gathered rows.
    pub fn gather_rows(&mut self, table: TensorId, ids: &[usize]) -> Result<TensorId> {
        let (r, c) = self.tensor(table).dims2()?;
        if ids.is_empty() {
            return Err(Error::invalid("gather_rows: empty id list"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::invalid(format!(
                "gather_rows: row {bad} out of range for table with {r} rows"
            )));
        }
        let rg = self.requires_grad_any(&[table]);
        self.push(
            vec![ids.len(), c],
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Functional row replacement: a copy of `table` with row `ids[j]`
    /// replaced by row j of `rows`. Ids must be distinct.
    pub fn scatter_rows(
        &mut self,
        table: TensorId,
        ids: &[usize],
        rows: TensorId,
    ) -> Result<TensorId> {
        let (r, c) = self.tensor(table).dims2()?;
        if ids.is_empty() {
            // Degenerate but well-defined: an unchanged copy of the table.
            let sa = self.shape(table).to_vec();
            let rg = self.requires_grad_any(&[table, rows]);
            return self.push(
                sa,
                Op::ScatterRows {
                    table,
                    rows,
                    ids: Vec::new(),
                },
                rg,
            );
        }
        let (k, ck) = self.tensor(rows).dims2()?;
        if ck != c || k != ids.len() {
            return Err(Error::ShapeMismatch {
                op: "scatter_rows",
                lhs: vec![r, c],
                rhs: vec![k, ck],
            });
        }
        let mut seen = vec![false; r];
        for &i in ids {
            if i >= r {
                return Err(Error::invalid(format!(
                    "scatter_rows: row {i} out of range for table with {r} rows"
                )));
            }
            if seen[i] {
                return Err(Error::invalid(format!("scatter_rows: duplicate row {i}")));
            }
            seen[i] = true;
        }
        let rg = self.requires_grad_any(&[table, rows]);
        self.push(
            vec![r, c],
            Op::ScatterRows {
                table,
                rows,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != self.tensor(a).numel() || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape,
            });
        }
        let rg = self.requires_grad_any(&[a]);
        self.push(shape, Op::Reshape { a }, rg)
    }

    // ---- composites used everywhere ------------------------------------------

    /// x @ w + b with `b` broadcast over rows.
    pub fn linear(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    /// Row `i` of a matrix as a `[1, cols]` tensor.
    pub fn row(&mut self, a: TensorId, i: usize) -> Result<TensorId> {
        self.slice(a, 0, i, i + 1)
    }

    /// Mean over rows of a matrix, kept as a `[1, cols]` tensor.
    pub fn mean_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let (_, c) = self.tensor(a).dims2()?;
        let m = self.reduce(a, 0, ReduceKind::Mean)?;
        self.reshape(m, vec![1, c])
    }

    // ---- autodiff -------------------------------------------------------------

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate into each
    /// node's `grad` buffer; repeated calls without clearing add up.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.tensor(loss).numel() != 1 {
            return Err(Error::invalid(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        pending[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].tensor.requires_grad {
                pending[i] = None;
                continue;
            }
            let Some(g) = pending[i].take() else {
                continue;
            };
            propagate(&self.nodes, i, &g, &mut pending);
            let t = &mut self.nodes[i].tensor;
            let numel = t.numel();
            let buf = t.grad.get_or_insert_with(|| vec![0.0; numel]);
            for (dst, src) in buf.iter_mut().zip(&g) {
                *dst += src;
            }
        }
        Ok(())
    }

    /// Recompute every non-leaf node from its recorded operation. Dropout
    /// masks are part of the record, so a replay is bit-identical.
    pub fn replay_forward(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            let (prior, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if let Some(data) = eval_op(prior, &mut node.op)? {
                node.tensor.data = data;
            }
        }
        Ok(())
    }
}

/// Forward evaluation of one op against already-computed nodes. Returns
/// `None` for leaves. Also refreshes any cached context the backward pass
/// needs (softmax probs, reduce winners, layer-norm statistics).
fn eval_op(prior: &[Node], op: &mut Op) -> Result<Option<Vec<f64>>> {
    let val = |id: TensorId| -> &Tensor { &prior[id.0].tensor };
    let out = match op {
        Op::Leaf => return Ok(None),
        Op::MatMul { a, b } => {
            let (ta, tb) = (val(*a), val(*b));
            let (m, k) = (ta.shape[0], ta.shape[1]);
            let n = tb.shape[1];
            matmul_raw(&ta.data, &tb.data, m, k, n)
        }
        Op::Add { a, b, broadcast } => {
            let (ta, tb) = (val(*a), val(*b));
            if *broadcast {
                let inner = tb.data.len();
                let mut out = ta.data.clone();
                for chunk in out.chunks_mut(inner) {
                    for (x, y) in chunk.iter_mut().zip(&tb.data) {
                        *x += y;
                    }
                }
                out
            } else {
                ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect()
            }
        }
        Op::Mul { a, b } => {
            let (ta, tb) = (val(*a), val(*b));
            ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect()
        }
        Op::Scale { a, c } => val(*a).data.iter().map(|x| x * *c).collect(),
        Op::Concat { parts, axis } => {
            if *axis == 0 {
                let mut out = Vec::new();
                for p in parts.iter() {
                    out.extend_from_slice(&val(*p).data);
                }
                out
            } else {
                // axis 1 on rank-2 tensors: stitch row segments.
                let rows = val(parts[0]).shape[0];
                let total_cols: usize = parts.iter().map(|p| val(*p).shape[1]).sum();
                let mut out = Vec::with_capacity(rows * total_cols);
                for r in 0..rows {
                    for p in parts.iter() {
                        let t = val(*p);
                        let c = t.shape[1];
                        out.extend_from_slice(&t.data[r * c..(r + 1) * c]);
                    }
                }
                out
            }
        }
        Op::Slice {
            a,
            axis,
            start,
            end,
        } => {
            let (axis, start, end) = (*axis, *start, *end);
            let t = val(*a);
            let (outer, _len, inner) = axis_split(&t.shape, axis);
            let width = end - start;
            let mut out = Vec::with_capacity(outer * width * inner);
            let stride = t.shape[axis] * inner;
            for o in 0..outer {
                let base = o * stride + start * inner;
                out.extend_from_slice(&t.data[base..base + width * inner]);
            }
            out
        }
        Op::Transpose { a } => {
            let t = val(*a);
            let (r, c) = (t.shape[0], t.shape[1]);
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = t.data[i * c + j];
                }
            }
            out
        }
        Op::Relu { a } => val(*a).data.iter().map(|&x| x.max(0.0)).collect(),
        Op::Sigmoid { a } => val(*a)
            .data
            .iter()
            .map(|&x| 1.0 / (1.0 + (-x).exp()))
            .collect(),
        Op::Tanh { a } => val(*a).data.iter().map(|&x| x.tanh()).collect(),
        Op::Reduce {
            a,
            axis,
            kind,
            winners,
        } => {
            let t = val(*a);
            let (outer, len, inner) = axis_split(&t.shape, *axis);
            let mut out = vec![0.0; outer * inner];
            winners.clear();
            if matches!(kind, ReduceKind::Max | ReduceKind::Min) {
                winners.resize(outer * inner, 0);
            }
            for o in 0..outer {
                for i in 0..inner {
                    let first = o * len * inner + i;
                    match kind {
                        ReduceKind::Sum | ReduceKind::Mean => {
                            let mut s = 0.0;
                            for j in 0..len {
                                s += t.data[first + j * inner];
                            }
                            if matches!(kind, ReduceKind::Mean) {
                                s /= len as f64;
                            }
                            out[o * inner + i] = s;
                        }
                        ReduceKind::Max | ReduceKind::Min => {
                            let mut best = t.data[first];
                            let mut best_j = 0;
                            for j in 1..len {
                                let v = t.data[first + j * inner];
                                let better = match kind {
                                    ReduceKind::Max => v > best,
                                    _ => v < best,
                                };
                                if better {
                                    best = v;
                                    best_j = j;
                                }
                            }
                            out[o * inner + i] = best;
                            winners[o * inner + i] = first + best_j * inner;
                        }
                    }
                }
            }
            out
        }
        Op::SumAll { a } => vec![val(*a).data.iter().sum()],
        Op::Dropout { a, mask } => val(*a)
            .data
            .iter()
            .zip(mask.iter())
            .map(|(x, m)| x * m)
            .collect(),
        Op::LayerNorm {
            x,
            gamma,
            beta,
            eps,
            inv_std,
            normalized,
        } => {
            let eps = *eps;
            let t = val(*x);
            let g = &val(*gamma).data;
            let b = &val(*beta).data;
            let d = *t.shape.last().unwrap();
            let rows = t.data.len() / d;
            inv_std.clear();
            normalized.clear();
            normalized.resize(t.data.len(), 0.0);
            let mut out = vec![0.0; t.data.len()];
            for r in 0..rows {
                let xs = &t.data[r * d..(r + 1) * d];
                let mean = xs.iter().sum::<f64>() / d as f64;
                let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std.push(is);
                for j in 0..d {
                    let nh = (xs[j] - mean) * is;
                    normalized[r * d + j] = nh;
                    out[r * d + j] = nh * g[j] + b[j];
                }
            }
            out
        }
        Op::Softmax { a, axis } => {
            let t = val(*a);
            let (outer, len, inner) = axis_split(&t.shape, *axis);
            let mut out = vec![0.0; t.data.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let first = o * len * inner + i;
                    let mut mx = f64::NEG_INFINITY;
                    for j in 0..len {
                        mx = mx.max(t.data[first + j * inner]);
                    }
                    let mut z = 0.0;
                    for j in 0..len {
                        let e = (t.data[first + j * inner] - mx).exp();
                        out[first + j * inner] = e;
                        z += e;
                    }
                    for j in 0..len {
                        out[first + j * inner] /= z;
                    }
                }
            }
            out
        }
        Op::CrossEntropy {
            logits,
            labels,
            probs,
        } => {
            let t = val(*logits);
            let classes = t.shape[1];
            let b = t.shape[0];
            probs.clear();
            probs.resize(t.data.len(), 0.0);
            let mut total = 0.0;
            for r in 0..b {
                let row = &t.data[r * classes..(r + 1) * classes];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for (j, &v) in row.iter().enumerate() {
                    let e = (v - mx).exp();
                    probs[r * classes + j] = e;
                    z += e;
                }
                for j in 0..classes {
                    probs[r * classes + j] /= z;
                }
                // log p directly from the shifted logits for stability.
                total -= row[labels[r]] - mx - z.ln();
            }
            vec![total / b as f64]
        }
        Op::GatherRows { table, ids } => {
            let t = val(*table);
            let c = t.shape[1];
            let mut out = Vec::with_capacity(ids.len() * c);
            for &i in ids.iter() {
                out.extend_from_slice(&t.data[i * c..(i + 1) * c]);
            }
            out
        }
        Op::ScatterRows { table, rows, ids } => {
            let t = val(*table);
            let c = t.shape[1];
            let mut out = t.data.clone();
            let src = &val(*rows).data;
            for (j, &i) in ids.iter().enumerate() {
                out[i * c..(i + 1) * c].copy_from_slice(&src[j * c..(j + 1) * c]);
            }
            out
        }
        Op::Reshape { a } => val(*a).data.clone(),
    };
    Ok(Some(out))
}

/// Scatter the output gradient `g` of node `i` into its inputs' pending slots.
fn propagate(nodes: &[Node], i: usize, g: &[f64], pending: &mut [Option<Vec<f64>>]) {
    let wants = |id: TensorId| nodes[id.0].tensor.requires_grad;
    let mut accum = |id: TensorId, f: &mut dyn FnMut(&mut [f64])| {
        if !wants(id) {
            return;
        }
        let slot =
            pending[id.0].get_or_insert_with(|| vec![0.0; nodes[id.0].tensor.numel()]);
        f(slot);
    };
    match &nodes[i].op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let ta = &nodes[a.0].tensor;
            let tb = &nodes[b.0].tensor;
            let (m, k) = (ta.shape[0], ta.shape[1]);
            let n = tb.shape[1];
            accum(*a, &mut |da| matmul_bt_acc(g, &tb.data, m, n, k, da));
            accum(*b, &mut |db| matmul_at_acc(&ta.data, g, m, k, n, db));
        }
        Op::Add { a, b, broadcast } => {
            accum(*a, &mut |da| {
                for (x, y) in da.iter_mut().zip(g) {
                    *x += y;
                }
            });
            if *broadcast {
                let inner = nodes[b.0].tensor.numel();
                accum(*b, &mut |db| {
                    for (j, y) in g.iter().enumerate() {
                        db[j % inner] += y;
                    }
                });
            } else {
                accum(*b, &mut |db| {
                    for (x, y) in db.iter_mut().zip(g) {
                        *x += y;
                    }
                });
            }
        }
        Op::Mul { a, b } => {
            let da_src = &nodes[b.0].tensor.data;
            let db_src = &nodes[a.0].tensor.data;
            accum(*a, &mut |da| {
                for ((x, y), z) in da.iter_mut().zip(g).zip(da_src) {
                    *x += y * z;
                }
            });
            accum(*b, &mut |db| {
                for ((x, y), z) in db.iter_mut().zip(g).zip(db_src) {
                    *x += y * z;
                }
            });
        }
        Op::Scale { a, c } => {
            accum(*a, &mut |da| {
                for (x, y) in da.iter_mut().zip(g) {
                    *x += c * y;
                }
            });
        }
        Op::Concat { parts, axis } => {
            if *axis == 0 {
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].tensor.numel();
                    accum(*p, &mut |dp| {
                        for (x, y) in dp.iter_mut().zip(&g[offset..offset + len]) {
                            *x += y;
                        }
                    });
                    offset += len;
                }
            } else {
                let rows = nodes[parts[0].0].tensor.shape[0];
                let total_cols: usize = parts.iter().map(|p| nodes[p.0].tensor.shape[1]).sum();
                let mut col_offset = 0;
                for p in parts {
                    let c = nodes[p.0].tensor.shape[1];
                    accum(*p, &mut |dp| {
                        for r in 0..rows {
                            let src = r * total_cols + col_offset;
                            for j in 0..c {
                                dp[r * c + j] += g[src + j];
                            }
                        }
                    });
                    col_offset += c;
                }
            }
        }
        Op::Slice {
            a,
            axis,
            start,
            end,
        } => {
            let shape = &nodes[a.0].tensor.shape;
            let (outer, len, inner) = axis_split(shape, *axis);
            let width = end - start;
            accum(*a, &mut |da| {
                for o in 0..outer {
                    let dst = o * len * inner + start * inner;
                    let src = o * width * inner;
                    for j in 0..width * inner {
                        da[dst + j] += g[src + j];
                    }
                }
            });
        }
        Op::Transpose { a } => {
            let (r, c) = {
                let s = &nodes[a.0].tensor.shape;
                (s[0], s[1])
            };
            accum(*a, &mut |da| {
                for i2 in 0..c {
                    for j in 0..r {
                        da[j * c + i2] += g[i2 * r + j];
                    }
                }
            });
        }
        Op::Relu { a } => {
            let x = &nodes[a.0].tensor.data;
            accum(*a, &mut |da| {
                for (j, y) in g.iter().enumerate() {
                    if x[j] > 0.0 {
                        da[j] += y;
                    }
                }
            });
        }
        Op::Sigmoid { a } => {
            let y = &nodes[i].tensor.data;
            accum(*a, &mut |da| {
                for (j, gy) in g.iter().enumerate() {
                    da[j] += gy * y[j] * (1.0 - y[j]);
                }
            });
        }
        Op::Tanh { a } => {
            let y = &nodes[i].tensor.data;
            accum(*a, &mut |da| {
                for (j, gy) in g.iter().enumerate() {
                    da[j] += gy * (1.0 - y[j] * y[j]);
                }
            });
        }
        Op::Reduce {
            a,
            axis,
            kind,
            winners,
        } => {
            let shape = &nodes[a.0].tensor.shape;
            let (outer, len, inner) = axis_split(shape, *axis);
            accum(*a, &mut |da| match kind {
                ReduceKind::Sum => {
                    for o in 0..outer {
                        for i2 in 0..inner {
                            let gy = g[o * inner + i2];
                            for j in 0..len {
                                da[o * len * inner + j * inner + i2] += gy;
                            }
                        }
                    }
                }
                ReduceKind::Mean => {
                    let scale = 1.0 / len as f64;
                    for o in 0..outer {
                        for i2 in 0..inner {
                            let gy = g[o * inner + i2] * scale;
                            for j in 0..len {
                                da[o * len * inner + j * inner + i2] += gy;
                            }
                        }
                    }
                }
                ReduceKind::Max | ReduceKind::Min => {
                    for (out_idx, &w) in winners.iter().enumerate() {
                        da[w] += g[out_idx];
                    }
                }
            });
        }
        Op::SumAll { a } => {
            accum(*a, &mut |da| {
                for x in da.iter_mut() {
                    *x += g[0];
                }
            });
        }
        Op::Dropout { a, mask } => {
            accum(*a, &mut |da| {
                for (j, gy) in g.iter().enumerate() {
                    da[j] += gy * mask[j];
                }
            });
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            inv_std,
            normalized,
            ..
        } => {
            let d = *nodes[x.0].tensor.shape.last().unwrap();
            let rows = nodes[x.0].tensor.numel() / d;
            let gm = &nodes[gamma.0].tensor.data;
            accum(*x, &mut |dx| {
                for r in 0..rows {
                    let is = inv_std[r];
                    let gr = &g[r * d..(r + 1) * d];
                    let nh = &normalized[r * d..(r + 1) * d];
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..d {
                        let gj = gr[j] * gm[j];
                        m1 += gj;
                        m2 += gj * nh[j];
                    }
                    m1 /= d as f64;
                    m2 /= d as f64;
                    for j in 0..d {
                        let gj = gr[j] * gm[j];
                        dx[r * d + j] += is * (gj - m1 - nh[j] * m2);
                    }
                }
            });
            accum(*gamma, &mut |dg| {
                for r in 0..rows {
                    for j in 0..d {
                        dg[j] += g[r * d + j] * normalized[r * d + j];
                    }
                }
            });
            accum(*beta, &mut |db| {
                for r in 0..rows {
                    for j in 0..d {
                        db[j] += g[r * d + j];
                    }
                }
            });
        }
        Op::Softmax { a, axis } => {
            let y = &nodes[i].tensor.data;
            let shape = &nodes[a.0].tensor.shape;
            let (outer, len, inner) = axis_split(shape, *axis);
            accum(*a, &mut |da| {
                for o in 0..outer {
                    for i2 in 0..inner {
                        let first = o * len * inner + i2;
                        let mut dot = 0.0;
                        for j in 0..len {
                            let idx = first + j * inner;
                            dot += g[idx] * y[idx];
                        }
                        for j in 0..len {
                            let idx = first + j * inner;
                            da[idx] += y[idx] * (g[idx] - dot);
                        }
                    }
                }
            });
        }
        Op::CrossEntropy {
            logits,
            labels,
            probs,
        } => {
            let (b, classes) = {
                let s = &nodes[logits.0].tensor.shape;
                (s[0], s[1])
            };
            let scale = g[0] / b as f64;
            accum(*logits, &mut |dl| {
                #[allow(clippy::needless_range_loop)]
                for r in 0..b {
                    for j in 0..classes {
                        let idx = r * classes + j;
                        let delta = if j == labels[r] { 1.0 } else { 0.0 };
                        dl[idx] += scale * (probs[idx] - delta);
                    }
                }
            });
        }
        Op::GatherRows { table, ids } => {
            let c = nodes[table.0].tensor.shape[1];
            accum(*table, &mut |dt| {
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..c {
                        dt[id * c + j] += g[r * c + j];
                    }
                }
            });
        }
        Op::ScatterRows { table, rows, ids } => {
            let c = nodes[table.0].tensor.shape[1];
            accum(*table, &mut |dt| {
                let mut replaced = vec![false; nodes[table.0].tensor.shape[0]];
                for &id in ids {
                    replaced[id] = true;
                }
                for (r, rep) in replaced.iter().enumerate() {
                    if !rep {
                        for j in 0..c {
                            dt[r * c + j] += g[r * c + j];
                        }
                    }
                }
            });
            accum(*rows, &mut |dr| {
                for (j, &id) in ids.iter().enumerate() {
                    for k2 in 0..c {
                        dr[j * c + k2] += g[id * c + k2];
                    }
                }
            });
        }
        Op::Reshape { a } => {
            accum(*a, &mut |da| {
                for (x, y) in da.iter_mut().zip(g) {
                    *x += y;
                }
            });
        }
    }
}
