//! Entity-wise feedforward layers and masked multi-head attention.
//!
//! Inputs are matrices with one row per entity. The attention ops operate on
//! a grouped layout: `x` holds `groups` independent instances stacked
//! vertically, each with `entities` rows, and the mask has one row per query
//! per group. With `groups = 1` this is plain single-instance attention.
//! Queries are taken from a fixed set of entity indices (the agents), so the
//! output has one row per agent per group. A masked-out entity contributes
//! exactly nothing to a query's output: its attention weight is exactly zero.

use crate::graph::{Binder, Graph, GraphError, NodeId};
use crate::tensor::{BoolMat, Tensor};
use rand::Rng;

/// Query/key/value projections of one attention head.
#[derive(Debug, Clone)]
pub struct HeadParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

/// Per-head projection parameters of a multi-head attention layer.
///
/// The concatenated output width is `heads.len() * head_dim`.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub heads: Vec<HeadParams>,
}

impl AttentionParams {
    /// `out_dim` must be divisible by `n_heads`; each head projects
    /// `in_dim -> out_dim / n_heads`.
    pub fn init<R: Rng>(in_dim: usize, n_heads: usize, out_dim: usize, rng: &mut R) -> Self {
        assert!(n_heads >= 1, "attention needs at least one head");
        assert_eq!(
            out_dim % n_heads,
            0,
            "attention width {out_dim} not divisible by {n_heads} heads"
        );
        let hd = out_dim / n_heads;
        let bound = 1.0 / (in_dim as f64).sqrt();
        let heads = (0..n_heads)
            .map(|_| HeadParams {
                w_q: Tensor::rand_uniform(&[in_dim, hd], -bound, bound, rng),
                w_k: Tensor::rand_uniform(&[in_dim, hd], -bound, bound, rng),
                w_v: Tensor::rand_uniform(&[in_dim, hd], -bound, bound, rng),
            })
            .collect();
        AttentionParams { heads }
    }

    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn head_dim(&self) -> usize {
        self.heads[0].w_q.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.n_heads() * self.head_dim()
    }

    pub fn bind(&self, b: &mut Binder) -> AttentionLeaves {
        AttentionLeaves {
            heads: self
                .heads
                .iter()
                .map(|h| HeadLeaves {
                    w_q: b.leaf(&h.w_q),
                    w_k: b.leaf(&h.w_k),
                    w_v: b.leaf(&h.w_v),
                })
                .collect(),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a Tensor)) {
        for (i, h) in self.heads.iter().enumerate() {
            f(format!("{prefix}.h{i}.w_q"), &h.w_q);
            f(format!("{prefix}.h{i}.w_k"), &h.w_k);
            f(format!("{prefix}.h{i}.w_v"), &h.w_v);
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        for h in &mut self.heads {
            f(&mut h.w_q);
            f(&mut h.w_k);
            f(&mut h.w_v);
        }
    }
}

/// Bound leaf ids for one head.
pub struct HeadLeaves {
    pub w_q: NodeId,
    pub w_k: NodeId,
    pub w_v: NodeId,
}

/// Bound leaf ids for a full attention layer.
pub struct AttentionLeaves {
    pub heads: Vec<HeadLeaves>,
}

/// Grouped input layout: `groups` stacked instances of `entities` rows each.
#[derive(Debug, Clone, Copy)]
pub struct AttnLayout {
    pub groups: usize,
    pub entities: usize,
}

impl AttnLayout {
    pub fn single(entities: usize) -> Self {
        AttnLayout { groups: 1, entities }
    }
}

/// Entity-wise feedforward layer: the same affine map applied independently
/// to every row.
pub fn entity_ff(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
    let xw = g.matmul(x, w)?;
    g.add_bias(xw, b)
}

fn validate_attention(
    g: &Graph,
    x: NodeId,
    layout: AttnLayout,
    queries: &[usize],
    mask: &BoolMat,
) -> Result<(), GraphError> {
    let (gc, ne) = (layout.groups, layout.entities);
    let sx = g.value(x).shape();
    if sx.len() != 2 || sx[0] != gc * ne {
        return Err(GraphError::ShapeMismatch {
            op: "attention",
            detail: format!("x {sx:?} does not match layout {gc} x {ne}"),
        });
    }
    for &q in queries {
        if q >= ne {
            return Err(GraphError::IndexOutOfRange {
                op: "attention",
                index: q,
                len: ne,
            });
        }
    }
    if mask.rows() != gc * queries.len() || mask.cols() != ne {
        return Err(GraphError::ShapeMismatch {
            op: "attention",
            detail: format!(
                "mask {}x{} vs expected {}x{}",
                mask.rows(),
                mask.cols(),
                gc * queries.len(),
                ne
            ),
        });
    }
    Ok(())
}

/// Gather the per-group query rows. When the queries are exactly all
/// entities in order the input is already the query matrix, so no copy is
/// made.
pub(crate) fn query_rows(
    g: &mut Graph,
    x: NodeId,
    layout: AttnLayout,
    queries: &[usize],
) -> Result<NodeId, GraphError> {
    if queries.len() == layout.entities && queries.iter().enumerate().all(|(i, &q)| q == i) {
        return Ok(x);
    }
    let mut rows = Vec::with_capacity(layout.groups * queries.len());
    for b in 0..layout.groups {
        for &q in queries {
            rows.push(b * layout.entities + q);
        }
    }
    g.gather_rows(x, &rows)
}

fn head_from_queries(
    g: &mut Graph,
    q_rows: NodeId,
    x: NodeId,
    layout: AttnLayout,
    mask: &BoolMat,
    head: &HeadLeaves,
) -> Result<NodeId, GraphError> {
    let head_dim = g.value(head.w_q).cols();
    let q = g.matmul(q_rows, head.w_q)?;
    let k = g.matmul(x, head.w_k)?;
    let v = g.matmul(x, head.w_v)?;
    let scores = g.grouped_matmul_nt(q, k, layout.groups)?;
    let scaled = g.affine(scores, 1.0 / (head_dim as f64).sqrt(), 0.0);
    let att = g.masked_softmax(scaled, mask)?;
    g.grouped_matmul(att, v, layout.groups)
}

/// One masked attention head. `queries` are entity indices (shared across
/// groups); `mask` has shape `(groups * queries.len(), entities)`. Row `i` of
/// the output depends only on entities the mask admits for that query; a
/// fully masked query row yields a zero output row.
pub fn attention_head(
    g: &mut Graph,
    x: NodeId,
    layout: AttnLayout,
    queries: &[usize],
    mask: &BoolMat,
    head: &HeadLeaves,
) -> Result<NodeId, GraphError> {
    validate_attention(g, x, layout, queries, mask)?;
    let q_rows = query_rows(g, x, layout, queries)?;
    head_from_queries(g, q_rows, x, layout, mask, head)
}

/// Parallel attention heads with column-wise concatenated outputs.
pub fn multi_head_attention(
    g: &mut Graph,
    x: NodeId,
    layout: AttnLayout,
    queries: &[usize],
    mask: &BoolMat,
    attn: &AttentionLeaves,
) -> Result<NodeId, GraphError> {
    validate_attention(g, x, layout, queries, mask)?;
    let q_rows = query_rows(g, x, layout, queries)?;
    let mut parts = Vec::with_capacity(attn.heads.len());
    for head in &attn.heads {
        parts.push(head_from_queries(g, q_rows, x, layout, mask, head)?);
    }
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        g.concat_cols(&parts)
    }
}
