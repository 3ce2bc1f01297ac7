//! Shared-parameter per-agent utility network.
//!
//! One set of parameters serves every agent. Per timestep the network
//! encodes all entities with an entity-wise feedforward layer, runs a single
//! masked multi-head attention pass with the agents as queries (one layer
//! only — stacking attention would leak information about unseen entities
//! through intermediaries), concatenates each agent's own encoding with its
//! attention readout, advances a GRU, and maps the hidden state to
//! per-action utilities. An agent's output therefore depends only on the
//! entities its mask row admits plus its own recurrent state, which is what
//! makes greedy execution decentralizable. The same function is evaluated
//! under the observability mask and under the in-group/out-group partition
//! masks ("imagined" passes), with an independent recurrent stream each.

use crate::attention::{multi_head_attention, AttentionLeaves, AttentionParams, AttnLayout};
use crate::graph::{gru_cell, Binder, Graph, GraphError, GruLeaves, GruParams, NodeId};
use crate::tensor::{BoolMat, Tensor};
use rand::Rng;
use std::fmt;

/// Parameters of the utility network.
#[derive(Debug, Clone)]
pub struct AgentNetParams {
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub attn: AttentionParams,
    pub gru: GruParams,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl AgentNetParams {
    pub fn init<R: Rng>(
        feat_dim: usize,
        n_actions: usize,
        attn_dim: usize,
        n_heads: usize,
        rnn_dim: usize,
        rng: &mut R,
    ) -> Self {
        let be = 1.0 / (feat_dim as f64).sqrt();
        let bh = 1.0 / (rnn_dim as f64).sqrt();
        AgentNetParams {
            embed_w: Tensor::rand_uniform(&[feat_dim, attn_dim], -be, be, rng),
            embed_b: Tensor::rand_uniform(&[attn_dim], -be, be, rng),
            attn: AttentionParams::init(attn_dim, n_heads, attn_dim, rng),
            // GRU input: own encoding concatenated with the attention readout
            gru: GruParams::init(2 * attn_dim, rnn_dim, rng),
            head_w: Tensor::rand_uniform(&[rnn_dim, n_actions], -bh, bh, rng),
            head_b: Tensor::rand_uniform(&[n_actions], -bh, bh, rng),
        }
    }

    pub fn rnn_dim(&self) -> usize {
        self.head_w.rows()
    }

    pub fn n_actions(&self) -> usize {
        self.head_w.cols()
    }

    pub fn bind(&self, b: &mut Binder) -> AgentLeaves {
        AgentLeaves {
            embed_w: b.leaf(&self.embed_w),
            embed_b: b.leaf(&self.embed_b),
            attn: self.attn.bind(b),
            gru: self.gru.bind(b),
            head_w: b.leaf(&self.head_w),
            head_b: b.leaf(&self.head_b),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a Tensor)) {
        f(format!("{prefix}.embed_w"), &self.embed_w);
        f(format!("{prefix}.embed_b"), &self.embed_b);
        self.attn.visit(&format!("{prefix}.attn"), f);
        self.gru.visit(&format!("{prefix}.gru"), f);
        f(format!("{prefix}.head_w"), &self.head_w);
        f(format!("{prefix}.head_b"), &self.head_b);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        f(&mut self.embed_w);
        f(&mut self.embed_b);
        self.attn.visit_mut(f);
        self.gru.visit_mut(f);
        f(&mut self.head_w);
        f(&mut self.head_b);
    }
}

/// Bound leaf ids of [`AgentNetParams`].
pub struct AgentLeaves {
    pub embed_w: NodeId,
    pub embed_b: NodeId,
    pub attn: AttentionLeaves,
    pub gru: GruLeaves,
    pub head_w: NodeId,
    pub head_b: NodeId,
}

/// One utility evaluation step under a given mask.
///
/// `x` is the grouped entity matrix `(groups * entities, feat_dim)`,
/// `hidden_in` the recurrent state `(groups * n_agents, rnn_dim)`, and
/// `mask` an agent-by-entity mask `(groups * n_agents, entities)`. Returns
/// per-action utilities `(groups * n_agents, n_actions)` and the next
/// recurrent state.
pub fn utilities(
    g: &mut Graph,
    lv: &AgentLeaves,
    x: NodeId,
    layout: AttnLayout,
    agent_indices: &[usize],
    mask: &BoolMat,
    hidden_in: NodeId,
) -> Result<(NodeId, NodeId), GraphError> {
    let enc_pre = crate::attention::entity_ff(g, x, lv.embed_w, lv.embed_b)?;
    let enc = g.relu(enc_pre);

    let own = crate::attention::query_rows(g, enc, layout, agent_indices)?;
    let att = multi_head_attention(g, enc, layout, agent_indices, mask, &lv.attn)?;
    let gru_in = g.concat_cols(&[own, att])?;
    let hidden_out = gru_cell(g, gru_in, hidden_in, &lv.gru)?;
    let q_pre = g.matmul(hidden_out, lv.head_w)?;
    let q = g.add_bias(q_pre, lv.head_b)?;
    Ok((q, hidden_out))
}

/// The three per-step mask variants: full observability, in-group, out-group.
#[derive(Clone, Copy)]
pub struct TripleMasks<'a> {
    pub full: &'a BoolMat,
    pub in_group: &'a BoolMat,
    pub out_group: &'a BoolMat,
}

/// Recurrent stream per mask variant. The imagined passes carry their own
/// histories; all three streams start at zero each episode.
#[derive(Clone, Copy)]
pub struct StreamNodes {
    pub full: NodeId,
    pub in_group: NodeId,
    pub out_group: NodeId,
}

/// Per-agent utilities from the three passes.
pub struct TripleQ {
    pub full: NodeId,
    pub in_group: NodeId,
    pub out_group: NodeId,
}

/// Evaluate the utility network three times with shared parameters: under
/// the observability mask and under the observability-restricted in-group
/// and out-group masks.
pub fn triple_pass(
    g: &mut Graph,
    lv: &AgentLeaves,
    x: NodeId,
    layout: AttnLayout,
    agent_indices: &[usize],
    masks: TripleMasks,
    hidden: StreamNodes,
) -> Result<(TripleQ, StreamNodes), GraphError> {
    let (q_full, h_full) = utilities(g, lv, x, layout, agent_indices, masks.full, hidden.full)?;
    let (q_in, h_in) = utilities(g, lv, x, layout, agent_indices, masks.in_group, hidden.in_group)?;
    let (q_out, h_out) = utilities(
        g,
        lv,
        x,
        layout,
        agent_indices,
        masks.out_group,
        hidden.out_group,
    )?;
    Ok((
        TripleQ {
            full: q_full,
            in_group: q_in,
            out_group: q_out,
        },
        StreamNodes {
            full: h_full,
            in_group: h_in,
            out_group: h_out,
        },
    ))
}

/// Action-selection failure: an agent with no available action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoAvailableAction {
    pub agent: usize,
}

impl fmt::Display for NoAvailableAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent {} has no available action", self.agent)
    }
}

impl std::error::Error for NoAvailableAction {}

/// Per-row argmax over available actions; ties break toward the lowest
/// action index.
pub fn greedy_actions(q: &Tensor, avail: &BoolMat) -> Result<Vec<usize>, NoAvailableAction> {
    assert_eq!(q.rows(), avail.rows());
    assert_eq!(q.cols(), avail.cols());
    let mut out = Vec::with_capacity(q.rows());
    for r in 0..q.rows() {
        let mut best: Option<(usize, f64)> = None;
        for c in 0..q.cols() {
            if !avail.get(r, c) {
                continue;
            }
            let v = q.get2(r, c);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((c, v));
            }
        }
        match best {
            Some((c, _)) => out.push(c),
            None => return Err(NoAvailableAction { agent: r }),
        }
    }
    Ok(out)
}

/// Greedy selection with per-agent epsilon exploration over the available
/// actions. Epsilon zero is exactly greedy and consumes no randomness.
pub fn epsilon_greedy<R: Rng>(
    q: &Tensor,
    avail: &BoolMat,
    epsilon: f64,
    rng: &mut R,
) -> Result<Vec<usize>, NoAvailableAction> {
    let greedy = greedy_actions(q, avail)?;
    let mut out = Vec::with_capacity(greedy.len());
    for (r, &g_action) in greedy.iter().enumerate() {
        if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
            let options: Vec<usize> = (0..q.cols()).filter(|&c| avail.get(r, c)).collect();
            out.push(options[rng.gen_range(0..options.len())]);
        } else {
            out.push(g_action);
        }
    }
    Ok(out)
}
