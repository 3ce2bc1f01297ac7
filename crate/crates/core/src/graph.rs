//! Reverse-mode automatic differentiation over a dynamic tape.
//!
//! A [`Graph`] records every primitive operation applied during a forward
//! pass. Nodes are stored in construction order, so the record is already
//! topologically sorted: every input of node `i` appears before `i`.
//! [`Graph::backward`] replays the tape in reverse, accumulating
//! vector-Jacobian products into per-node gradient slots.
//!
//! The tape is rebuilt from scratch on every training step. Values are
//! computed eagerly when an op is pushed, so a node's output is available
//! immediately via [`Graph::value`]. A graph is single-threaded; separate
//! graphs may live on separate threads.

use crate::tensor::{BoolMat, Tensor};
use rand::Rng;
use std::fmt;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// Errors raised while building or differentiating a graph.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphError {
    ShapeMismatch {
        op: &'static str,
        detail: String,
    },
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    NonScalarLoss {
        elements: usize,
    },
}

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphError::ShapeMismatch { op, detail } => {
                write!(f, "shape mismatch in {op}: {detail}")
            }
            GraphError::IndexOutOfRange { op, index, len } => {
                write!(f, "index {index} out of range {len} in {op}")
            }
            GraphError::NonScalarLoss { elements } => {
                write!(f, "backward requires a scalar loss, got {elements} elements")
            }
        }
    }
}

impl std::error::Error for GraphError {}

fn shape_err(op: &'static str, detail: String) -> GraphError {
    GraphError::ShapeMismatch { op, detail }
}

enum Op {
    Leaf,
    /// 2-D product `a[m,k] @ b[k,n]`.
    Matmul { a: NodeId, b: NodeId },
    /// Block-diagonal product over `groups` stacked instances:
    /// `a[(g m), kk] @ b[(g kk), n] -> [(g m), n]` per group.
    GroupedMatmul { a: NodeId, b: NodeId, groups: usize },
    /// Grouped product against transposed right factors:
    /// `a[(g m), k] @ b[(g n), k]^T -> [(g m), n]` per group.
    GroupedMatmulNt { a: NodeId, b: NodeId, groups: usize },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    /// Elementwise `mul * x + add`; only the slope matters for backward.
    Affine { x: NodeId, mul: f64 },
    /// Row-broadcast bias: `x[r,c] + bias[c]`.
    AddBias { x: NodeId, bias: NodeId },
    Relu { x: NodeId },
    Elu { x: NodeId },
    Sigmoid { x: NodeId },
    Tanh { x: NodeId },
    /// Per-row softmax over the last axis; entries with mask = 0 are treated
    /// as negative infinity and come out exactly zero. A fully masked row
    /// yields an all-zero row. The mask is not needed for backward: masked
    /// outputs are exactly zero, so the standard softmax VJP covers them.
    MaskedSoftmax { x: NodeId },
    Reshape { x: NodeId },
    ConcatCols { parts: Vec<NodeId> },
    ConcatRows { parts: Vec<NodeId> },
    /// Per-group row concatenation over `groups` stacked instances:
    /// `[(g m1), k] ++ [(g m2), k] -> [(g (m1+m2)), k]`.
    InterleaveRows { a: NodeId, b: NodeId, groups: usize },
    GatherRows { x: NodeId, indices: Vec<usize> },
    /// `out[r,0] = x[r, cols[r]]`.
    SelectPerRow { x: NodeId, cols: Vec<usize> },
    /// Average consecutive blocks of `block` rows.
    MeanRowBlocks { x: NodeId, block: usize },
    /// Row-wise sum to a column vector.
    RowSum { x: NodeId },
    SumAll { x: NodeId },
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

/// Dynamic tape of primitive operations with eager forward evaluation.
pub struct Graph {
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

// ---------------------------------------------------------------------------
// dense kernels (all accumulate into `out`)

fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    // i-k-j loop order: streams rows of `b` and accumulates into a row of
    // `out`, two-way unrolled over k so the compiler vectorizes the j loop.
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        let mut p = 0;
        while p + 1 < k {
            let (a0, a1) = (arow[p], arow[p + 1]);
            let b0 = &b[p * n..(p + 1) * n];
            let b1 = &b[(p + 1) * n..(p + 2) * n];
            for ((o, &v0), &v1) in orow.iter_mut().zip(b0).zip(b1) {
                *o += a0 * v0 + a1 * v1;
            }
            p += 2;
        }
        if p < k {
            let a0 = arow[p];
            let b0 = &b[p * n..(p + 1) * n];
            for (o, &v0) in orow.iter_mut().zip(b0) {
                *o += a0 * v0;
            }
        }
    }
}

/// Four-lane dot product; the explicit lanes break the serial dependency
/// chain so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let (ac, ar) = a.split_at(a.len() - a.len() % 4);
    let (bc, br) = b.split_at(ac.len());
    for (ca, cb) in ac.chunks_exact(4).zip(bc.chunks_exact(4)) {
        lanes[0] += ca[0] * cb[0];
        lanes[1] += ca[1] * cb[1];
        lanes[2] += ca[2] * cb[2];
        lanes[3] += ca[3] * cb[3];
    }
    let mut s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (&av, &bv) in ar.iter().zip(br) {
        s += av * bv;
    }
    s
}

/// `out[m,n] += a[m,k] @ b[n,k]^T`
fn matmul_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            *o += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[k,n] += a[m,k]^T @ g[m,n]`
fn matmul_tn_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn with_capacity(n: usize) -> Self {
        Graph {
            nodes: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a differentiable leaf (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Insert a non-differentiable leaf (input data, targets, masks-as-data).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated for `id` by the most recent [`Graph::backward`].
    /// `None` if no gradient flowed to the node.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn val(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    // -- binary / structural ops ------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_acc(self.val(a).data(), self.val(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Matmul { a, b }, Tensor::from_vec(&[m, n], out), rg))
    }

    /// Block-diagonal product over `groups` stacked instances: group `g` of
    /// the output is `a_g[m, kk] @ b_g[kk, n]` where `a` stacks `m`-row
    /// blocks and `b` stacks `kk`-row blocks.
    pub fn grouped_matmul(
        &mut self,
        a: NodeId,
        b: NodeId,
        groups: usize,
    ) -> Result<NodeId, GraphError> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa.len() != 2
            || sb.len() != 2
            || groups == 0
            || sa[0] % groups != 0
            || sb[0] % groups != 0
            || sb[0] / groups != sa[1]
        {
            return Err(shape_err(
                "grouped_matmul",
                format!("{sa:?} x {sb:?} over {groups} groups"),
            ));
        }
        let (m, kk, n) = (sa[0] / groups, sa[1], sb[1]);
        let mut out = vec![0.0; groups * m * n];
        let (da, db) = (self.val(a).data(), self.val(b).data());
        for i in 0..groups {
            matmul_acc(
                &da[i * m * kk..(i + 1) * m * kk],
                &db[i * kk * n..(i + 1) * kk * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                kk,
                n,
            );
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Op::GroupedMatmul { a, b, groups },
            Tensor::from_vec(&[groups * m, n], out),
            rg,
        ))
    }

    /// Grouped product against transposed right factors: group `g` of the
    /// output is `a_g[m, k] @ b_g[n, k]^T`.
    pub fn grouped_matmul_nt(
        &mut self,
        a: NodeId,
        b: NodeId,
        groups: usize,
    ) -> Result<NodeId, GraphError> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa.len() != 2
            || sb.len() != 2
            || groups == 0
            || sa[0] % groups != 0
            || sb[0] % groups != 0
            || sa[1] != sb[1]
        {
            return Err(shape_err(
                "grouped_matmul_nt",
                format!("{sa:?} x {sb:?}^T over {groups} groups"),
            ));
        }
        let (m, k, n) = (sa[0] / groups, sa[1], sb[0] / groups);
        let mut out = vec![0.0; groups * m * n];
        let (da, db) = (self.val(a).data(), self.val(b).data());
        for i in 0..groups {
            matmul_nt_acc(
                &da[i * m * k..(i + 1) * m * k],
                &db[i * n * k..(i + 1) * n * k],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Op::GroupedMatmulNt { a, b, groups },
            Tensor::from_vec(&[groups * m, n], out),
            rg,
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa != sb {
            return Err(shape_err("add", format!("{sa:?} vs {sb:?}")));
        }
        let data = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = sa.to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add { a, b }, Tensor::from_vec(&shape, data), rg))
    }

    /// `a - b`, composed from existing primitives.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let nb = self.affine(b, -1.0, 0.0);
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa != sb {
            return Err(shape_err("mul", format!("{sa:?} vs {sb:?}")));
        }
        let data = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = sa.to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul { a, b }, Tensor::from_vec(&shape, data), rg))
    }

    pub fn affine(&mut self, x: NodeId, mul: f64, add: f64) -> NodeId {
        let shape = self.val(x).shape().to_vec();
        let data = self.val(x).data().iter().map(|&v| mul * v + add).collect();
        let rg = self.rg(x);
        self.push(Op::Affine { x, mul }, Tensor::from_vec(&shape, data), rg)
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, GraphError> {
        let sx = self.val(x).shape().to_vec();
        if sx.len() != 2 || self.val(bias).numel() != sx[1] {
            return Err(shape_err(
                "add_bias",
                format!("{sx:?} + bias of {} elements", self.val(bias).numel()),
            ));
        }
        let (r, c) = (sx[0], sx[1]);
        let bd = self.val(bias).data();
        let mut data = Vec::with_capacity(r * c);
        for row in self.val(x).data().chunks(c) {
            for (v, b) in row.iter().zip(bd) {
                data.push(v + b);
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Op::AddBias { x, bias }, Tensor::from_vec(&sx, data), rg))
    }

    // -- elementwise nonlinearities ----------------------------------------

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let shape = self.val(x).shape().to_vec();
        let data = self.val(x).data().iter().map(|&v| v.max(0.0)).collect();
        let rg = self.rg(x);
        self.push(Op::Relu { x }, Tensor::from_vec(&shape, data), rg)
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, x: NodeId) -> NodeId {
        let shape = self.val(x).shape().to_vec();
        let data = self
            .val(x)
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { v.exp() - 1.0 })
            .collect();
        let rg = self.rg(x);
        self.push(Op::Elu { x }, Tensor::from_vec(&shape, data), rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let shape = self.val(x).shape().to_vec();
        let data = self
            .val(x)
            .data()
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let rg = self.rg(x);
        self.push(Op::Sigmoid { x }, Tensor::from_vec(&shape, data), rg)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let shape = self.val(x).shape().to_vec();
        let data = self.val(x).data().iter().map(|&v| v.tanh()).collect();
        let rg = self.rg(x);
        self.push(Op::Tanh { x }, Tensor::from_vec(&shape, data), rg)
    }

    // -- softmax -------------------------------------------------------------

    /// Per-row softmax where entries with `mask = 0` are excluded (treated as
    /// negative infinity) and come out exactly `0.0`. Rows with at least one
    /// surviving entry sum to one; fully masked rows are all zeros.
    pub fn masked_softmax(&mut self, x: NodeId, mask: &BoolMat) -> Result<NodeId, GraphError> {
        let sx = self.val(x).shape();
        if sx.len() != 2 || sx[0] != mask.rows() || sx[1] != mask.cols() {
            return Err(shape_err(
                "masked_softmax",
                format!("logits {sx:?} vs mask {}x{}", mask.rows(), mask.cols()),
            ));
        }
        self.softmax_impl(x, Some(mask.clone()))
    }

    /// Unmasked per-row softmax.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let sx = self.val(x).shape();
        if sx.len() != 2 {
            return Err(shape_err("softmax_rows", format!("{sx:?}")));
        }
        self.softmax_impl(x, None)
    }

    fn softmax_impl(&mut self, x: NodeId, mask: Option<BoolMat>) -> Result<NodeId, GraphError> {
        let sx = self.val(x).shape().to_vec();
        let (r, c) = (sx[0], sx[1]);
        let xd = self.val(x).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &xd[i * c..(i + 1) * c];
            let keep = |j: usize| mask.as_ref().is_none_or(|m| m.get(i, j));
            let mut mx = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if keep(j) && v > mx {
                    mx = v;
                }
            }
            if mx == f64::NEG_INFINITY {
                continue; // fully masked row stays zero
            }
            let out = &mut data[i * c..(i + 1) * c];
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if keep(j) {
                    let e = (v - mx).exp();
                    out[j] = e;
                    sum += e;
                }
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Op::MaskedSoftmax { x }, Tensor::from_vec(&sx, data), rg))
    }

    // -- structural ops ------------------------------------------------------

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, GraphError> {
        let n: usize = shape.iter().product();
        if n != self.val(x).numel() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {shape:?}", self.val(x).shape()),
            ));
        }
        let data = self.val(x).data().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Op::Reshape { x }, Tensor::from_vec(shape, data), rg))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, GraphError> {
        if parts.is_empty() {
            return Err(shape_err("concat_cols", "no inputs".into()));
        }
        let r = self.val(parts[0]).shape()[0];
        let mut total = 0;
        for &p in parts {
            let s = self.val(p).shape();
            if s.len() != 2 || s[0] != r {
                return Err(shape_err("concat_cols", format!("{s:?} with {r} rows expected")));
            }
            total += s[1];
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let t = self.val(p);
                data.extend_from_slice(t.row(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            Tensor::from_vec(&[r, total], data),
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, GraphError> {
        if parts.is_empty() {
            return Err(shape_err("concat_rows", "no inputs".into()));
        }
        let c = self.val(parts[0]).shape()[1];
        let mut rows = 0;
        for &p in parts {
            let s = self.val(p).shape();
            if s.len() != 2 || s[1] != c {
                return Err(shape_err("concat_rows", format!("{s:?} with {c} cols expected")));
            }
            rows += s[0];
        }
        let mut data = Vec::with_capacity(rows * c);
        for &p in parts {
            data.extend_from_slice(self.val(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            Tensor::from_vec(&[rows, c], data),
            rg,
        ))
    }

    /// Per-group row concatenation: group `g` of the output stacks the rows
    /// of `a`'s block `g` above `b`'s block `g`.
    pub fn interleave_rows(
        &mut self,
        a: NodeId,
        b: NodeId,
        groups: usize,
    ) -> Result<NodeId, GraphError> {
        let (sa, sb) = (self.val(a).shape().to_vec(), self.val(b).shape().to_vec());
        if sa.len() != 2
            || sb.len() != 2
            || groups == 0
            || sa[0] % groups != 0
            || sb[0] % groups != 0
            || sa[1] != sb[1]
        {
            return Err(shape_err(
                "interleave_rows",
                format!("{sa:?} ++ {sb:?} over {groups} groups"),
            ));
        }
        let (m1, m2, k) = (sa[0] / groups, sb[0] / groups, sa[1]);
        let (da, db) = (self.val(a).data(), self.val(b).data());
        let mut data = Vec::with_capacity(groups * (m1 + m2) * k);
        for i in 0..groups {
            data.extend_from_slice(&da[i * m1 * k..(i + 1) * m1 * k]);
            data.extend_from_slice(&db[i * m2 * k..(i + 1) * m2 * k]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Op::InterleaveRows { a, b, groups },
            Tensor::from_vec(&[groups * (m1 + m2), k], data),
            rg,
        ))
    }

    pub fn gather_rows(&mut self, x: NodeId, indices: &[usize]) -> Result<NodeId, GraphError> {
        let sx = self.val(x).shape();
        if sx.len() != 2 {
            return Err(shape_err("gather_rows", format!("{sx:?}")));
        }
        let (r, c) = (sx[0], sx[1]);
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= r {
                return Err(GraphError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: r,
                });
            }
            data.extend_from_slice(self.val(x).row(i));
        }
        let rg = self.rg(x);
        Ok(self.push(
            Op::GatherRows {
                x,
                indices: indices.to_vec(),
            },
            Tensor::from_vec(&[indices.len(), c], data),
            rg,
        ))
    }

    /// Select one column per row: `out[r, 0] = x[r, cols[r]]`.
    pub fn select_per_row(&mut self, x: NodeId, cols: &[usize]) -> Result<NodeId, GraphError> {
        let sx = self.val(x).shape();
        if sx.len() != 2 || cols.len() != sx[0] {
            return Err(shape_err(
                "select_per_row",
                format!("{sx:?} with {} selectors", cols.len()),
            ));
        }
        let c = sx[1];
        let mut data = Vec::with_capacity(cols.len());
        for (i, &j) in cols.iter().enumerate() {
            if j >= c {
                return Err(GraphError::IndexOutOfRange {
                    op: "select_per_row",
                    index: j,
                    len: c,
                });
            }
            data.push(self.val(x).get2(i, j));
        }
        let rg = self.rg(x);
        Ok(self.push(
            Op::SelectPerRow {
                x,
                cols: cols.to_vec(),
            },
            Tensor::from_vec(&[cols.len(), 1], data),
            rg,
        ))
    }

    /// Average consecutive blocks of `block` rows: `[g*block, c] -> [g, c]`.
    pub fn mean_row_blocks(&mut self, x: NodeId, block: usize) -> Result<NodeId, GraphError> {
        let sx = self.val(x).shape();
        if sx.len() != 2 || block == 0 || !sx[0].is_multiple_of(block) {
            return Err(shape_err(
                "mean_row_blocks",
                format!("{sx:?} with block {block}"),
            ));
        }
        let (r, c) = (sx[0], sx[1]);
        let g = r / block;
        let xd = self.val(x).data();
        let mut data = vec![0.0; g * c];
        for i in 0..r {
            let o = &mut data[(i / block) * c..(i / block + 1) * c];
            for (ov, &xv) in o.iter_mut().zip(&xd[i * c..(i + 1) * c]) {
                *ov += xv;
            }
        }
        let inv = 1.0 / block as f64;
        for v in data.iter_mut() {
            *v *= inv;
        }
        let rg = self.rg(x);
        Ok(self.push(
            Op::MeanRowBlocks { x, block },
            Tensor::from_vec(&[g, c], data),
            rg,
        ))
    }

    /// Sum across columns, producing a column vector `[r, 1]`.
    pub fn row_sum(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let sx = self.val(x).shape();
        if sx.len() != 2 {
            return Err(shape_err("row_sum", format!("{sx:?}")));
        }
        let (r, c) = (sx[0], sx[1]);
        let xd = self.val(x).data();
        let data: Vec<f64> = (0..r).map(|i| xd[i * c..(i + 1) * c].iter().sum()).collect();
        let rg = self.rg(x);
        Ok(self.push(Op::RowSum { x }, Tensor::from_vec(&[r, 1], data), rg))
    }

    /// Sum of all elements, producing a `[1, 1]` scalar node.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.val(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Op::SumAll { x }, Tensor::scalar(s), rg)
    }

    // -- backward -------------------------------------------------------------

    /// Populate gradient slots for every differentiable node reachable from
    /// `loss`. The loss must be scalar. Deterministic: identical graphs yield
    /// bit-identical gradients.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), GraphError> {
        let n = self.nodes[loss.0].value.numel();
        if n != 1 {
            return Err(GraphError::NonScalarLoss { elements: n });
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            // Move the op and upstream gradient out of the node so inputs can
            // be mutated while the node's data stays readable.
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            let g_out = self.nodes[i].grad.take().expect("checked above");
            self.backward_op(&op, i, &g_out);
            let node = &mut self.nodes[i];
            node.grad = Some(g_out);
            node.op = op;
        }
        Ok(())
    }

    /// Take the gradient accumulator of `id` (allocating zeros on first use),
    /// or `None` if the node does not require gradients.
    fn take_grad(&mut self, id: NodeId) -> Option<Vec<f64>> {
        let n = &mut self.nodes[id.0];
        if !n.requires_grad {
            return None;
        }
        Some(n.grad.take().unwrap_or_else(|| vec![0.0; n.value.numel()]))
    }

    fn put_grad(&mut self, id: NodeId, buf: Vec<f64>) {
        self.nodes[id.0].grad = Some(buf);
    }

    /// Accumulate the vector-Jacobian product of one op directly into its
    /// inputs' gradient buffers.
    fn backward_op(&mut self, op: &Op, i: usize, g: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = {
                    let s = self.val(*a).shape();
                    (s[0], s[1])
                };
                let n = self.val(*b).shape()[1];
                if let Some(mut da) = self.take_grad(*a) {
                    matmul_nt_acc(g, self.val(*b).data(), &mut da, m, n, k);
                    self.put_grad(*a, da);
                }
                if let Some(mut db) = self.take_grad(*b) {
                    matmul_tn_acc(self.val(*a).data(), g, &mut db, m, k, n);
                    self.put_grad(*b, db);
                }
            }
            Op::GroupedMatmul { a, b, groups } => {
                let (gc, kk) = (*groups, self.val(*a).shape()[1]);
                let m = self.val(*a).shape()[0] / gc;
                let n = self.val(*b).shape()[1];
                if let Some(mut da) = self.take_grad(*a) {
                    let tb = self.val(*b).data();
                    for s in 0..gc {
                        matmul_nt_acc(
                            &g[s * m * n..(s + 1) * m * n],
                            &tb[s * kk * n..(s + 1) * kk * n],
                            &mut da[s * m * kk..(s + 1) * m * kk],
                            m,
                            n,
                            kk,
                        );
                    }
                    self.put_grad(*a, da);
                }
                if let Some(mut db) = self.take_grad(*b) {
                    let ta = self.val(*a).data();
                    for s in 0..gc {
                        matmul_tn_acc(
                            &ta[s * m * kk..(s + 1) * m * kk],
                            &g[s * m * n..(s + 1) * m * n],
                            &mut db[s * kk * n..(s + 1) * kk * n],
                            m,
                            kk,
                            n,
                        );
                    }
                    self.put_grad(*b, db);
                }
            }
            Op::GroupedMatmulNt { a, b, groups } => {
                // out_g = a_g[m, k] @ b_g[n, k]^T
                let (gc, k) = (*groups, self.val(*a).shape()[1]);
                let m = self.val(*a).shape()[0] / gc;
                let n = self.val(*b).shape()[0] / gc;
                if let Some(mut da) = self.take_grad(*a) {
                    let tb = self.val(*b).data();
                    for s in 0..gc {
                        // d_a += g @ b : [m,n] x [n,k]
                        matmul_acc(
                            &g[s * m * n..(s + 1) * m * n],
                            &tb[s * n * k..(s + 1) * n * k],
                            &mut da[s * m * k..(s + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    self.put_grad(*a, da);
                }
                if let Some(mut db) = self.take_grad(*b) {
                    let ta = self.val(*a).data();
                    for s in 0..gc {
                        // d_b += g^T @ a : [n,m] x [m,k]
                        matmul_tn_acc(
                            &g[s * m * n..(s + 1) * m * n],
                            &ta[s * m * k..(s + 1) * m * k],
                            &mut db[s * n * k..(s + 1) * n * k],
                            m,
                            n,
                            k,
                        );
                    }
                    self.put_grad(*b, db);
                }
            }
            Op::Add { a, b } => {
                for id in [a, b] {
                    if let Some(mut d) = self.take_grad(*id) {
                        for (dv, &gv) in d.iter_mut().zip(g) {
                            *dv += gv;
                        }
                        self.put_grad(*id, d);
                    }
                }
            }
            Op::Mul { a, b } => {
                if let Some(mut da) = self.take_grad(*a) {
                    for ((dv, &gv), &bv) in da.iter_mut().zip(g).zip(self.val(*b).data()) {
                        *dv += gv * bv;
                    }
                    self.put_grad(*a, da);
                }
                if let Some(mut db) = self.take_grad(*b) {
                    for ((dv, &gv), &av) in db.iter_mut().zip(g).zip(self.val(*a).data()) {
                        *dv += gv * av;
                    }
                    self.put_grad(*b, db);
                }
            }
            Op::Affine { x, mul } => {
                if let Some(mut dx) = self.take_grad(*x) {
                    for (dv, &gv) in dx.iter_mut().zip(g) {
                        *dv += mul * gv;
                    }
                    self.put_grad(*x, dx);
                }
            }
            Op::AddBias { x, bias } => {
                if let Some(mut dx) = self.take_grad(*x) {
                    for (dv, &gv) in dx.iter_mut().zip(g) {
                        *dv += gv;
                    }
                    self.put_grad(*x, dx);
                }
                if let Some(mut db) = self.take_grad(*bias) {
                    let c = db.len();
                    for row in g.chunks(c) {
                        for (dv, &gv) in db.iter_mut().zip(row) {
                            *dv += gv;
                        }
                    }
                    self.put_grad(*bias, db);
                }
            }
            Op::Relu { x } => {
                if let Some(mut dx) = self.take_grad(*x) {
                    for ((dv, &gv), &xv) in dx.iter_mut().zip(g).zip(self.val(*x).data()) {
                        if xv > 0.0 {
                            *dv += gv;
                        }
                    }
                    self.put_grad(*x, dx);
                }
            }
            Op::Elu { x } => {
                // y > 0 iff x > 0; for x <= 0, dy/dx = exp(x) = y + 1.
                if let Some(mut dx) = self.take_grad(*x) {
                    for ((dv, &gv), &yv) in dx.iter_mut().zip(g).zip(self.nodes[i].value.data()) {
                        *dv += if yv > 0.0 { gv } else { gv * (yv + 1.0) };
                    }
                    self.put_grad(*x, dx);
                }
            }
            Op::Sigmoid { x } => {
                if let Some(mut dx) = self.take_grad(*x) {
                    for ((dv, &gv), &yv) in dx.iter_mut().zip(g).zip(self.nodes[i].value.data()) {
                        *dv += gv * yv * (1.0 - yv);
                    }
                    self.put_grad(*x, dx);
                }
            }
            Op::Tanh { x } => {
                if let Some(mut dx) = self.take_grad(*x) {
                    for ((dv, &gv), &yv) in dx.iter_mut().zip(g).zip(self.nodes[i].value.data()) {
                        *dv += gv * (1.0 - yv * yv);
                    }
                    self.put_grad(*x, dx);
                }
            }
            Op::MaskedSoftmax { x } => {
                if let Some(mut dx) = self.take_grad(*x) {
                    let out = self.nodes[i].value.data();
                    let c = self.nodes[i].value.shape()[1];
                    let r = self.nodes[i].value.shape()[0];
                    for row in 0..r {
                        let yr = &out[row * c..(row + 1) * c];
                        let gr = &g[row * c..(row + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                        let dr = &mut dx[row * c..(row + 1) * c];
                        for j in 0..c {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                    self.put_grad(*x, dx);
                }
            }
            Op::Reshape { x } => {
                if let Some(mut dx) = self.take_grad(*x) {
                    for (dv, &gv) in dx.iter_mut().zip(g) {
                        *dv += gv;
                    }
                    self.put_grad(*x, dx);
                }
            }
            Op::ConcatCols { parts } => {
                let total = self.nodes[i].value.shape()[1];
                let r = self.nodes[i].value.shape()[0];
                let mut offset = 0;
                for &p in parts {
                    let c = self.val(p).shape()[1];
                    if let Some(mut dp) = self.take_grad(p) {
                        for row in 0..r {
                            let src = &g[row * total + offset..row * total + offset + c];
                            for (dv, &gv) in dp[row * c..(row + 1) * c].iter_mut().zip(src) {
                                *dv += gv;
                            }
                        }
                        self.put_grad(p, dp);
                    }
                    offset += c;
                }
            }
            Op::ConcatRows { parts } => {
                let c = self.nodes[i].value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let pr = self.val(p).shape()[0];
                    if let Some(mut dp) = self.take_grad(p) {
                        for (dv, &gv) in dp.iter_mut().zip(&g[offset * c..(offset + pr) * c]) {
                            *dv += gv;
                        }
                        self.put_grad(p, dp);
                    }
                    offset += pr;
                }
            }
            Op::InterleaveRows { a, b, groups } => {
                let gc = *groups;
                let k = self.val(*a).shape()[1];
                let m1 = self.val(*a).shape()[0] / gc;
                let m2 = self.val(*b).shape()[0] / gc;
                let stride = (m1 + m2) * k;
                if let Some(mut da) = self.take_grad(*a) {
                    for s in 0..gc {
                        let src = &g[s * stride..s * stride + m1 * k];
                        for (dv, &gv) in da[s * m1 * k..(s + 1) * m1 * k].iter_mut().zip(src) {
                            *dv += gv;
                        }
                    }
                    self.put_grad(*a, da);
                }
                if let Some(mut db) = self.take_grad(*b) {
                    for s in 0..gc {
                        let src = &g[s * stride + m1 * k..(s + 1) * stride];
                        for (dv, &gv) in db[s * m2 * k..(s + 1) * m2 * k].iter_mut().zip(src) {
                            *dv += gv;
                        }
                    }
                    self.put_grad(*b, db);
                }
            }
            Op::GatherRows { x, indices } => {
                if let Some(mut dx) = self.take_grad(*x) {
                    let c = self.nodes[i].value.shape()[1];
                    for (row, &src) in indices.iter().enumerate() {
                        let gr = &g[row * c..(row + 1) * c];
                        for (dv, &gv) in dx[src * c..(src + 1) * c].iter_mut().zip(gr) {
                            *dv += gv;
                        }
                    }
                    self.put_grad(*x, dx);
                }
            }
            Op::SelectPerRow { x, cols } => {
                if let Some(mut dx) = self.take_grad(*x) {
                    let c = self.val(*x).shape()[1];
                    for (row, &col) in cols.iter().enumerate() {
                        dx[row * c + col] += g[row];
                    }
                    self.put_grad(*x, dx);
                }
            }
            Op::MeanRowBlocks { x, block } => {
                if let Some(mut dx) = self.take_grad(*x) {
                    let c = self.nodes[i].value.shape()[1];
                    let r = self.val(*x).shape()[0];
                    let inv = 1.0 / *block as f64;
                    for row in 0..r {
                        let gr = &g[(row / block) * c..(row / block + 1) * c];
                        for (dv, &gv) in dx[row * c..(row + 1) * c].iter_mut().zip(gr) {
                            *dv += gv * inv;
                        }
                    }
                    self.put_grad(*x, dx);
                }
            }
            Op::RowSum { x } => {
                if let Some(mut dx) = self.take_grad(*x) {
                    let (r, c) = {
                        let s = self.val(*x).shape();
                        (s[0], s[1])
                    };
                    for row in 0..r {
                        for dv in dx[row * c..(row + 1) * c].iter_mut() {
                            *dv += g[row];
                        }
                    }
                    self.put_grad(*x, dx);
                }
            }
            Op::SumAll { x } => {
                if let Some(mut dx) = self.take_grad(*x) {
                    for dv in dx.iter_mut() {
                        *dv += g[0];
                    }
                    self.put_grad(*x, dx);
                }
            }
        }
    }
}

/// Binds parameter tensors into a graph while recording the leaf order, so
/// gradients can be read back in the same order they were bound.
pub struct Binder<'g> {
    pub graph: &'g mut Graph,
    pub order: Vec<NodeId>,
}

impl<'g> Binder<'g> {
    pub fn new(graph: &'g mut Graph) -> Self {
        Binder {
            graph,
            order: Vec::new(),
        }
    }

    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        let id = self.graph.leaf(t.clone());
        self.order.push(id);
        id
    }
}

// ---------------------------------------------------------------------------
// GRU cell

/// Parameters of a single GRU cell (reset gate, update gate, candidate).
#[derive(Debug, Clone)]
pub struct GruParams {
    pub w_xr: Tensor,
    pub w_hr: Tensor,
    pub b_r: Tensor,
    pub w_xz: Tensor,
    pub w_hz: Tensor,
    pub b_z: Tensor,
    pub w_xc: Tensor,
    pub w_hc: Tensor,
    pub b_c: Tensor,
}

impl GruParams {
    pub fn init<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let bx = 1.0 / (input_dim as f64).sqrt();
        let bh = 1.0 / (hidden_dim as f64).sqrt();
        let wx = |rng: &mut R| Tensor::rand_uniform(&[input_dim, hidden_dim], -bx, bx, rng);
        let wh = |rng: &mut R| Tensor::rand_uniform(&[hidden_dim, hidden_dim], -bh, bh, rng);
        let b = |rng: &mut R| Tensor::rand_uniform(&[hidden_dim], -bh, bh, rng);
        GruParams {
            w_xr: wx(rng),
            w_hr: wh(rng),
            b_r: b(rng),
            w_xz: wx(rng),
            w_hz: wh(rng),
            b_z: b(rng),
            w_xc: wx(rng),
            w_hc: wh(rng),
            b_c: b(rng),
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        GruParams {
            w_xr: Tensor::zeros(&[input_dim, hidden_dim]),
            w_hr: Tensor::zeros(&[hidden_dim, hidden_dim]),
            b_r: Tensor::zeros(&[hidden_dim]),
            w_xz: Tensor::zeros(&[input_dim, hidden_dim]),
            w_hz: Tensor::zeros(&[hidden_dim, hidden_dim]),
            b_z: Tensor::zeros(&[hidden_dim]),
            w_xc: Tensor::zeros(&[input_dim, hidden_dim]),
            w_hc: Tensor::zeros(&[hidden_dim, hidden_dim]),
            b_c: Tensor::zeros(&[hidden_dim]),
        }
    }

    pub fn bind(&self, b: &mut Binder) -> GruLeaves {
        GruLeaves {
            w_xr: b.leaf(&self.w_xr),
            w_hr: b.leaf(&self.w_hr),
            b_r: b.leaf(&self.b_r),
            w_xz: b.leaf(&self.w_xz),
            w_hz: b.leaf(&self.w_hz),
            b_z: b.leaf(&self.b_z),
            w_xc: b.leaf(&self.w_xc),
            w_hc: b.leaf(&self.w_hc),
            b_c: b.leaf(&self.b_c),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a Tensor)) {
        f(format!("{prefix}.w_xr"), &self.w_xr);
        f(format!("{prefix}.w_hr"), &self.w_hr);
        f(format!("{prefix}.b_r"), &self.b_r);
        f(format!("{prefix}.w_xz"), &self.w_xz);
        f(format!("{prefix}.w_hz"), &self.w_hz);
        f(format!("{prefix}.b_z"), &self.b_z);
        f(format!("{prefix}.w_xc"), &self.w_xc);
        f(format!("{prefix}.w_hc"), &self.w_hc);
        f(format!("{prefix}.b_c"), &self.b_c);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        f(&mut self.w_xr);
        f(&mut self.w_hr);
        f(&mut self.b_r);
        f(&mut self.w_xz);
        f(&mut self.w_hz);
        f(&mut self.b_z);
        f(&mut self.w_xc);
        f(&mut self.w_hc);
        f(&mut self.b_c);
    }
}

/// Leaf ids of a bound [`GruParams`].
pub struct GruLeaves {
    pub w_xr: NodeId,
    pub w_hr: NodeId,
    pub b_r: NodeId,
    pub w_xz: NodeId,
    pub w_hz: NodeId,
    pub b_z: NodeId,
    pub w_xc: NodeId,
    pub w_hc: NodeId,
    pub b_c: NodeId,
}

/// One GRU step: `h' = (1 - z) * h + z * tanh(x W_xc + (r * h) W_hc + b_c)`
/// with reset gate `r` and update gate `z`. With the update gate driven to
/// zero the cell keeps its previous hidden state.
pub fn gru_cell(
    g: &mut Graph,
    x: NodeId,
    h: NodeId,
    p: &GruLeaves,
) -> Result<NodeId, GraphError> {
    let xr = g.matmul(x, p.w_xr)?;
    let hr = g.matmul(h, p.w_hr)?;
    let r_pre = g.add(xr, hr)?;
    let r_pre = g.add_bias(r_pre, p.b_r)?;
    let r = g.sigmoid(r_pre);

    let xz = g.matmul(x, p.w_xz)?;
    let hz = g.matmul(h, p.w_hz)?;
    let z_pre = g.add(xz, hz)?;
    let z_pre = g.add_bias(z_pre, p.b_z)?;
    let z = g.sigmoid(z_pre);

    let rh = g.mul(r, h)?;
    let xc = g.matmul(x, p.w_xc)?;
    let hc = g.matmul(rh, p.w_hc)?;
    let c_pre = g.add(xc, hc)?;
    let c_pre = g.add_bias(c_pre, p.b_c)?;
    let cand = g.tanh(c_pre);

    let keep = g.affine(z, -1.0, 1.0);
    let kept = g.mul(keep, h)?;
    let new = g.mul(z, cand)?;
    g.add(kept, new)
}

#[cfg(test)]
impl BoolMat {
    fn from_vec_2x4(bits: &[bool]) -> BoolMat {
        BoolMat::from_rows(&[bits[..4].to_vec(), bits[4..].to_vec()])
    }
}
