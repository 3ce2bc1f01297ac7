//! Episode replay batching, double-Q targets, the combined factorized loss,
//! and RMSProp optimization.
//!
//! Targets follow double Q-learning: greedy actions come from the live
//! network (always under the observability mask — partition masks never
//! select actions) and are evaluated by the target network and target
//! mixer. The training objective is `(1 - lambda) * loss_q + lambda *
//! loss_aux`, where `loss_aux` regresses the 2n-factor imagined value
//! against the same targets. At `lambda = 0` the auxiliary path — including
//! partition sampling — is skipped entirely, which makes that configuration
//! bit-identical to plain attention-QMIX.

use crate::agent::{self, AgentLeaves};
use crate::attention::AttnLayout;
use crate::episode::Episode;
use crate::graph::{Graph, GraphError, NodeId};
use crate::mixing::{self, MixerKind};
use crate::params::{NetLeaves, NetParams, ParamSet};
use crate::partition::PartitionStrategy;
use crate::tensor::{BoolMat, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Optimization and exploration hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub lr: f64,
    pub rmsprop_alpha: f64,
    pub rmsprop_eps: f64,
    pub gamma: f64,
    /// Copy live parameters to the target network every this many episodes.
    pub target_interval: u64,
    /// Clip the global gradient norm to this value.
    pub grad_clip: f64,
    /// Replay capacity in episodes.
    pub buffer_capacity: usize,
    /// Episodes per training batch.
    pub batch_size: usize,
    /// Weight of the auxiliary imagined loss.
    pub lambda: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Environment steps over which exploration is annealed.
    pub anneal_steps: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            lr: 0.0005,
            rmsprop_alpha: 0.99,
            rmsprop_eps: 1e-5,
            gamma: 0.99,
            target_interval: 200,
            grad_clip: 10.0,
            buffer_capacity: 5000,
            batch_size: 32,
            lambda: 0.5,
            eps_start: 1.0,
            eps_end: 0.05,
            anneal_steps: 50_000,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if self.gamma <= 0.0 || self.gamma >= 1.0 {
            return Err(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err("batch size and buffer capacity must be positive".into());
        }
        Ok(())
    }
}

/// Linearly annealed exploration rate.
pub fn epsilon_at(cfg: &LearnerConfig, env_steps: u64) -> f64 {
    if env_steps >= cfg.anneal_steps {
        return cfg.eps_end;
    }
    let frac = env_steps as f64 / cfg.anneal_steps as f64;
    cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac
}

/// A padded, time-major batch of episodes ready for training. All per-step
/// tensors stack the batch episode-wise (`row = episode * n_agents + agent`
/// for agent rows). Padded steps replicate the final state, keep all actions
/// available, and carry `filled = false` so they contribute no loss.
pub struct EpisodeBatch {
    pub n_episodes: usize,
    /// Longest episode length in the batch.
    pub horizon: usize,
    pub n_entities: usize,
    pub n_agents: usize,
    pub n_actions: usize,
    pub feat_dim: usize,
    pub agent_indices: Vec<usize>,
    /// Per timestep `0..=horizon`.
    pub features: Vec<Tensor>,
    pub obs_masks: Vec<BoolMat>,
    pub avail: Vec<BoolMat>,
    /// Hypernetwork mask for the standard path: active entities only.
    pub hyper_full: Vec<BoolMat>,
    /// Per timestep `0..horizon`.
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<Vec<f64>>,
    pub terminated: Vec<Vec<bool>>,
    pub filled: Vec<Vec<bool>>,
    /// Partition-derived masks; present only when the auxiliary loss is in
    /// play. One fresh partition per episode per draw.
    pub obs_in: Option<Vec<BoolMat>>,
    pub obs_out: Option<Vec<BoolMat>>,
    pub hyper_in: Option<Vec<BoolMat>>,
    pub hyper_out: Option<Vec<BoolMat>>,
}

impl EpisodeBatch {
    pub fn filled_count(&self) -> usize {
        self.filled
            .iter()
            .map(|row| row.iter().filter(|&&f| f).count())
            .sum()
    }
}

/// Stack sampled episodes into a training batch, sampling one fresh
/// partition per episode when a strategy is given.
pub fn assemble_batch<R: Rng>(
    episodes: &[&Episode],
    strategy: Option<&PartitionStrategy>,
    rng: &mut R,
) -> EpisodeBatch {
    assert!(!episodes.is_empty());
    let first = episodes[0];
    let ne = first.states[0].n_entities();
    let na = first.states[0].n_agents();
    let d = first.states[0].feat_dim();
    let n_act = first.avail[0].cols();
    let agent_indices = first.states[0].agent_indices.clone();
    for ep in episodes {
        ep.validate();
        assert_eq!(ep.states[0].n_entities(), ne);
        assert_eq!(ep.states[0].agent_indices, agent_indices);
    }
    let b_count = episodes.len();
    let horizon = episodes.iter().map(|e| e.len()).max().unwrap();

    // per-episode partition masks, fixed across the episode's timesteps
    let partitions: Option<Vec<(BoolMat, BoolMat)>> = strategy.map(|s| {
        episodes
            .iter()
            .map(|ep| {
                s.sample_masks(ne, &agent_indices, &ep.ground_truth, rng)
                    .expect("partition strategy failed")
            })
            .collect()
    });

    fn state_at(ep: &Episode, t: usize) -> &crate::env::StateMatrix {
        &ep.states[t.min(ep.len())]
    }

    let mut features = Vec::with_capacity(horizon + 1);
    let mut obs_masks = Vec::with_capacity(horizon + 1);
    let mut avail = Vec::with_capacity(horizon + 1);
    let mut hyper_full = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        let mut data = Vec::with_capacity(b_count * ne * d);
        for ep in episodes {
            data.extend_from_slice(state_at(ep, t).features.data());
        }
        features.push(Tensor::from_vec(&[b_count * ne, d], data));
        obs_masks.push(BoolMat::from_fn(b_count * na, ne, |r, e| {
            let (b, a) = (r / na, r % na);
            state_at(episodes[b], t).obs_mask.get(a, e)
        }));
        avail.push(BoolMat::from_fn(b_count * na, n_act, |r, c| {
            let (b, a) = (r / na, r % na);
            let ep = episodes[b];
            if t <= ep.len() {
                ep.avail[t].get(a, c)
            } else {
                true // padding keeps every action available
            }
        }));
        hyper_full.push(BoolMat::from_fn(b_count * na, ne, |r, e| {
            let b = r / na;
            state_at(episodes[b], t).active[e]
        }));
    }

    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut terminated = Vec::with_capacity(horizon);
    let mut filled = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut act_row = Vec::with_capacity(b_count * na);
        let mut rew_row = Vec::with_capacity(b_count);
        let mut term_row = Vec::with_capacity(b_count);
        let mut fill_row = Vec::with_capacity(b_count);
        for ep in episodes {
            if t < ep.len() {
                act_row.extend_from_slice(&ep.actions[t]);
                rew_row.push(ep.rewards[t]);
                term_row.push(ep.terminated[t]);
                fill_row.push(true);
            } else {
                act_row.extend(std::iter::repeat_n(0, na));
                rew_row.push(0.0);
                term_row.push(true);
                fill_row.push(false);
            }
        }
        actions.push(act_row);
        rewards.push(rew_row);
        terminated.push(term_row);
        filled.push(fill_row);
    }

    let (mut obs_in, mut obs_out, mut hyper_in, mut hyper_out) = (None, None, None, None);
    if let Some(parts) = &partitions {
        let mut oi = Vec::with_capacity(horizon);
        let mut oo = Vec::with_capacity(horizon);
        let mut hi = Vec::with_capacity(horizon);
        let mut ho = Vec::with_capacity(horizon);
        for (t, obs_t) in obs_masks.iter().enumerate().take(horizon) {
            oi.push(BoolMat::from_fn(b_count * na, ne, |r, e| {
                let (b, a) = (r / na, r % na);
                parts[b].0.get(a, e) && obs_t.get(r, e)
            }));
            oo.push(BoolMat::from_fn(b_count * na, ne, |r, e| {
                let (b, a) = (r / na, r % na);
                parts[b].1.get(a, e) && obs_t.get(r, e)
            }));
            hi.push(BoolMat::from_fn(b_count * na, ne, |r, e| {
                let (b, a) = (r / na, r % na);
                parts[b].0.get(a, e) && state_at(episodes[b], t).active[e]
            }));
            ho.push(BoolMat::from_fn(b_count * na, ne, |r, e| {
                let (b, a) = (r / na, r % na);
                parts[b].1.get(a, e) && state_at(episodes[b], t).active[e]
            }));
        }
        obs_in = Some(oi);
        obs_out = Some(oo);
        hyper_in = Some(hi);
        hyper_out = Some(ho);
    }

    EpisodeBatch {
        n_episodes: b_count,
        horizon,
        n_entities: ne,
        n_agents: na,
        n_actions: n_act,
        feat_dim: d,
        agent_indices,
        features,
        obs_masks,
        avail,
        hyper_full,
        actions,
        rewards,
        terminated,
        filled,
        obs_in,
        obs_out,
        hyper_in,
        hyper_out,
    }
}

fn bind_features(g: &mut Graph, batch: &EpisodeBatch, last_t: usize) -> Vec<NodeId> {
    (0..=last_t)
        .map(|t| g.constant(batch.features[t].clone()))
        .collect()
}

/// Unroll the utility network over `steps` timesteps under per-step masks,
/// starting from a zero recurrent state. Returns per-step utility nodes.
fn unroll_q(
    g: &mut Graph,
    lv: &AgentLeaves,
    batch: &EpisodeBatch,
    feats: &[NodeId],
    masks: &[BoolMat],
    steps: usize,
    rnn_dim: usize,
) -> Result<Vec<NodeId>, GraphError> {
    let layout = AttnLayout {
        groups: batch.n_episodes,
        entities: batch.n_entities,
    };
    let mut hidden = g.constant(Tensor::zeros(&[batch.n_episodes * batch.n_agents, rnn_dim]));
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let (q, h) = agent::utilities(
            g,
            lv,
            feats[t],
            layout,
            &batch.agent_indices,
            &masks[t],
            hidden,
        )?;
        out.push(q);
        hidden = h;
    }
    Ok(out)
}

/// One constant holding the entity features of timesteps `ts`, stacked
/// time-major for batched mixer generation.
fn stacked_features(g: &mut Graph, batch: &EpisodeBatch, ts: std::ops::Range<usize>) -> NodeId {
    let rows_per_t = batch.n_episodes * batch.n_entities;
    let mut data = Vec::with_capacity(ts.len() * rows_per_t * batch.feat_dim);
    let count = ts.len();
    for t in ts {
        data.extend_from_slice(batch.features[t].data());
    }
    g.constant(Tensor::from_vec(&[count * rows_per_t, batch.feat_dim], data))
}

fn stacked_masks(masks: &[BoolMat], ts: std::ops::Range<usize>) -> BoolMat {
    let refs: Vec<&BoolMat> = ts.map(|t| &masks[t]).collect();
    BoolMat::stack_rows(&refs)
}

/// Gather chosen-action utilities per step and stack them time-major into a
/// `(horizon * episodes, n_agents)` node.
fn chosen_utilities(
    g: &mut Graph,
    batch: &EpisodeBatch,
    q_per_t: &[NodeId],
    actions: impl Fn(usize) -> Vec<usize>,
) -> Result<NodeId, GraphError> {
    let mut rows = Vec::with_capacity(q_per_t.len());
    for (t, &q) in q_per_t.iter().enumerate() {
        let sel = g.select_per_row(q, &actions(t))?;
        rows.push(g.reshape(sel, &[batch.n_episodes, batch.n_agents])?);
    }
    g.concat_rows(&rows)
}

fn mixer_layout(batch: &EpisodeBatch, steps: usize) -> AttnLayout {
    AttnLayout {
        groups: steps * batch.n_episodes,
        entities: batch.n_entities,
    }
}

/// Double-Q targets: `y_t = r_t` on terminal steps, otherwise
/// `r_t + gamma * Q_tot_target(t+1, argmax Q_live(t+1))`. Returned
/// time-major (`t * n_episodes + episode`). Built without backward, so
/// targets are gradient-isolated by construction.
pub fn compute_targets(
    batch: &EpisodeBatch,
    params: &ParamSet,
    mixer_kind: MixerKind,
    gamma: f64,
) -> Result<Vec<f64>, GraphError> {
    let t_max = batch.horizon;
    let b_count = batch.n_episodes;
    let rnn_dim = params.live.agent.rnn_dim();
    let mut g = Graph::new();
    let (live_lv, _) = params.live.bind(&mut g);
    let (tgt_lv, _) = params.target.bind(&mut g);
    let feats = bind_features(&mut g, batch, t_max);
    let q_live = unroll_q(&mut g, &live_lv.agent, batch, &feats, &batch.obs_masks, t_max + 1, rnn_dim)?;
    let q_tgt = unroll_q(&mut g, &tgt_lv.agent, batch, &feats, &batch.obs_masks, t_max + 1, rnn_dim)?;

    let mut chosen_rows = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        let greedy = agent::greedy_actions(g.value(q_live[t]), &batch.avail[t])
            .expect("padded availability admits an action");
        let sel = g.select_per_row(q_tgt[t], &greedy)?;
        chosen_rows.push(g.reshape(sel, &[b_count, batch.n_agents])?);
    }
    let chosen = g.concat_rows(&chosen_rows)?;

    let qtot_next = match (mixer_kind, &tgt_lv.mixer) {
        (MixerKind::Vdn, _) => mixing::mix_vdn(&mut g, chosen)?,
        (MixerKind::Qmix, Some(lvm)) => {
            let x = stacked_features(&mut g, batch, 1..t_max + 1);
            let hmask = stacked_masks(&batch.hyper_full, 1..t_max + 1);
            let nodes = mixing::generate_mixer(
                &mut g,
                lvm,
                x,
                mixer_layout(batch, t_max),
                &batch.agent_indices,
                &hmask,
            )?;
            mixing::mix(&mut g, chosen, &nodes)?
        }
        (MixerKind::Qmix, None) => {
            return Err(GraphError::ShapeMismatch {
                op: "compute_targets",
                detail: "mixer parameters missing".into(),
            })
        }
    };
    let next_vals = g.value(qtot_next).data();

    let mut y = vec![0.0; t_max * b_count];
    for t in 0..t_max {
        for b in 0..b_count {
            let r = batch.rewards[t][b];
            y[t * b_count + b] = if batch.terminated[t][b] {
                r
            } else {
                r + gamma * next_vals[t * b_count + b]
            };
        }
    }
    Ok(y)
}

/// Mixed value of the actions actually taken, per filled step (time-major).
fn build_q_tot(
    g: &mut Graph,
    lv: &NetLeaves,
    batch: &EpisodeBatch,
    mixer_kind: MixerKind,
) -> Result<NodeId, GraphError> {
    let t_max = batch.horizon;
    let rnn_dim_node = lv.agent.head_w;
    let rnn_dim = g.value(rnn_dim_node).rows();
    let feats = bind_features(g, batch, t_max.saturating_sub(1));
    let q = unroll_q(g, &lv.agent, batch, &feats, &batch.obs_masks, t_max, rnn_dim)?;
    let chosen = chosen_utilities(g, batch, &q, |t| batch.actions[t].clone())?;
    match (mixer_kind, &lv.mixer) {
        (MixerKind::Vdn, _) => mixing::mix_vdn(g, chosen),
        (MixerKind::Qmix, Some(lvm)) => {
            let x = stacked_features(g, batch, 0..t_max);
            let hmask = stacked_masks(&batch.hyper_full, 0..t_max);
            let nodes = mixing::generate_mixer(
                g,
                lvm,
                x,
                mixer_layout(batch, t_max),
                &batch.agent_indices,
                &hmask,
            )?;
            mixing::mix(g, chosen, &nodes)
        }
        (MixerKind::Qmix, None) => Err(GraphError::ShapeMismatch {
            op: "build_q_tot",
            detail: "mixer parameters missing".into(),
        }),
    }
}

/// Imagined 2n-factor value of the taken actions, per filled step.
fn build_q_tot_aux(
    g: &mut Graph,
    lv: &NetLeaves,
    batch: &EpisodeBatch,
    mixer_kind: MixerKind,
) -> Result<NodeId, GraphError> {
    let (obs_in, obs_out) = (
        batch.obs_in.as_ref().expect("partition masks required"),
        batch.obs_out.as_ref().expect("partition masks required"),
    );
    let t_max = batch.horizon;
    let rnn_dim = g.value(lv.agent.head_w).rows();
    let feats = bind_features(g, batch, t_max.saturating_sub(1));
    let q_in = unroll_q(g, &lv.agent, batch, &feats, obs_in, t_max, rnn_dim)?;
    let q_out = unroll_q(g, &lv.agent, batch, &feats, obs_out, t_max, rnn_dim)?;
    let in_chosen = chosen_utilities(g, batch, &q_in, |t| batch.actions[t].clone())?;
    let out_chosen = chosen_utilities(g, batch, &q_out, |t| batch.actions[t].clone())?;
    match (mixer_kind, &lv.mixer) {
        (MixerKind::Vdn, _) => {
            let all = g.concat_cols(&[in_chosen, out_chosen])?;
            mixing::mix_vdn(g, all)
        }
        (MixerKind::Qmix, Some(lvm)) => {
            let x = stacked_features(g, batch, 0..t_max);
            let hmask_in = stacked_masks(batch.hyper_in.as_ref().unwrap(), 0..t_max);
            let hmask_out = stacked_masks(batch.hyper_out.as_ref().unwrap(), 0..t_max);
            let layout = mixer_layout(batch, t_max);
            let gen_in =
                mixing::generate_mixer(g, lvm, x, layout, &batch.agent_indices, &hmask_in)?;
            let gen_out =
                mixing::generate_mixer(g, lvm, x, layout, &batch.agent_indices, &hmask_out)?;
            mixing::mix_aux(g, in_chosen, out_chosen, &gen_in, &gen_out)
        }
        (MixerKind::Qmix, None) => Err(GraphError::ShapeMismatch {
            op: "build_q_tot_aux",
            detail: "mixer parameters missing".into(),
        }),
    }
}

/// Mean squared error between `values` and `targets` over filled steps.
fn masked_mse(
    g: &mut Graph,
    batch: &EpisodeBatch,
    values: NodeId,
    targets: &[f64],
) -> Result<NodeId, GraphError> {
    let rows = batch.horizon * batch.n_episodes;
    assert_eq!(targets.len(), rows);
    let y = g.constant(Tensor::from_vec(&[rows, 1], targets.to_vec()));
    let fill: Vec<f64> = (0..batch.horizon)
        .flat_map(|t| batch.filled[t].iter().map(|&f| if f { 1.0 } else { 0.0 }))
        .collect();
    let filled_count: f64 = fill.iter().sum();
    let fill_node = g.constant(Tensor::from_vec(&[rows, 1], fill));
    let diff = g.sub(values, y)?;
    let masked = g.mul(diff, fill_node)?;
    let sq = g.mul(masked, masked)?;
    let total = g.sum_all(sq);
    Ok(g.affine(total, 1.0 / filled_count.max(1.0), 0.0))
}

/// TD loss node over a bound parameter set (shared by `train_step` and the
/// standalone evaluators).
pub fn build_q_loss(
    g: &mut Graph,
    lv: &NetLeaves,
    batch: &EpisodeBatch,
    mixer_kind: MixerKind,
    targets: &[f64],
) -> Result<NodeId, GraphError> {
    let qtot = build_q_tot(g, lv, batch, mixer_kind)?;
    masked_mse(g, batch, qtot, targets)
}

/// Auxiliary-loss node over a bound parameter set.
pub fn build_aux_loss(
    g: &mut Graph,
    lv: &NetLeaves,
    batch: &EpisodeBatch,
    mixer_kind: MixerKind,
    targets: &[f64],
) -> Result<NodeId, GraphError> {
    let qtot = build_q_tot_aux(g, lv, batch, mixer_kind)?;
    masked_mse(g, batch, qtot, targets)
}

/// Standalone TD-loss evaluation (no parameter update).
pub fn loss_q(
    batch: &EpisodeBatch,
    net: &NetParams,
    mixer_kind: MixerKind,
    targets: &[f64],
) -> Result<f64, GraphError> {
    let mut g = Graph::new();
    let (lv, _) = net.bind(&mut g);
    let loss = build_q_loss(&mut g, &lv, batch, mixer_kind, targets)?;
    Ok(g.value(loss).data()[0])
}

/// Standalone auxiliary-loss evaluation (no parameter update).
pub fn loss_aux(
    batch: &EpisodeBatch,
    net: &NetParams,
    mixer_kind: MixerKind,
    targets: &[f64],
) -> Result<f64, GraphError> {
    let mut g = Graph::new();
    let (lv, _) = net.bind(&mut g);
    let loss = build_aux_loss(&mut g, &lv, batch, mixer_kind, targets)?;
    Ok(g.value(loss).data()[0])
}

/// Mixed value of the taken actions, time-major (diagnostics and tests).
pub fn q_tot_chosen(
    batch: &EpisodeBatch,
    net: &NetParams,
    mixer_kind: MixerKind,
) -> Result<Vec<f64>, GraphError> {
    let mut g = Graph::new();
    let (lv, _) = net.bind(&mut g);
    let qtot = build_q_tot(&mut g, &lv, batch, mixer_kind)?;
    Ok(g.value(qtot).data().to_vec())
}

/// Scale gradients so their global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|gv| gv.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for gv in grads.iter_mut() {
            for v in gv.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// RMSProp with a running average of squared gradients (no momentum, eps
/// added outside the square root).
pub struct RmsProp {
    alpha: f64,
    eps: f64,
    cache: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(alpha: f64, eps: f64) -> Self {
        RmsProp {
            alpha,
            eps,
            cache: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut NetParams, grads: &[Vec<f64>], lr: f64) {
        if self.cache.is_empty() {
            self.cache = grads.iter().map(|gv| vec![0.0; gv.len()]).collect();
        }
        assert_eq!(self.cache.len(), grads.len());
        let (alpha, eps) = (self.alpha, self.eps);
        let mut idx = 0;
        params.visit_mut(&mut |t| {
            let gs = &grads[idx];
            let cs = &mut self.cache[idx];
            for ((w, &gv), cv) in t.data_mut().iter_mut().zip(gs).zip(cs.iter_mut()) {
                *cv = alpha * *cv + (1.0 - alpha) * gv * gv;
                *w -= lr * gv / (cv.sqrt() + eps);
            }
            idx += 1;
        });
        assert_eq!(idx, grads.len());
    }
}

/// Loss components and gradient norm of one training step.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainMetrics {
    pub loss: f64,
    pub loss_q: f64,
    pub loss_aux: f64,
    pub grad_norm: f64,
}

/// One optimization step on `(1 - lambda) * loss_q + lambda * loss_aux`.
/// The auxiliary term is skipped entirely at `lambda = 0` and the standard
/// term at `lambda = 1`.
pub fn train_step(
    params: &mut ParamSet,
    opt: &mut RmsProp,
    batch: &EpisodeBatch,
    cfg: &LearnerConfig,
    mixer_kind: MixerKind,
) -> Result<TrainMetrics, GraphError> {
    let targets = compute_targets(batch, params, mixer_kind, cfg.gamma)?;
    let mut g = Graph::new();
    let (lv, order) = params.live.bind(&mut g);
    let lambda = cfg.lambda;
    let lq = if lambda < 1.0 {
        Some(build_q_loss(&mut g, &lv, batch, mixer_kind, &targets)?)
    } else {
        None
    };
    let la = if lambda > 0.0 {
        Some(build_aux_loss(&mut g, &lv, batch, mixer_kind, &targets)?)
    } else {
        None
    };
    let total = match (lq, la) {
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (Some(a), Some(b)) => {
            let sa = g.affine(a, 1.0 - lambda, 0.0);
            let sb = g.affine(b, lambda, 0.0);
            g.add(sa, sb)?
        }
        (None, None) => unreachable!("lambda is in [0, 1]"),
    };
    g.backward(total)?;
    let mut grads: Vec<Vec<f64>> = order
        .iter()
        .map(|&id| {
            g.grad(id)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; g.value(id).numel()])
        })
        .collect();
    let grad_norm = clip_global_norm(&mut grads, cfg.grad_clip);
    opt.step(&mut params.live, &grads, cfg.lr);
    Ok(TrainMetrics {
        loss: g.value(total).data()[0],
        loss_q: lq.map_or(0.0, |n| g.value(n).data()[0]),
        loss_aux: la.map_or(0.0, |n| g.value(n).data()[0]),
        grad_norm,
    })
}

/// Periodic whole-copy of live parameters into the target network.
pub struct TargetScheduler {
    interval: u64,
    last_sync: u64,
}

impl TargetScheduler {
    pub fn new(interval: u64) -> Self {
        TargetScheduler {
            interval: interval.max(1),
            last_sync: 0,
        }
    }

    /// Sync when at least `interval` episodes have elapsed since the last
    /// copy. Returns whether a copy happened.
    pub fn maybe_sync(&mut self, total_episodes: u64, params: &mut ParamSet) -> bool {
        if total_episodes >= self.last_sync + self.interval {
            params.sync_target();
            self.last_sync = total_episodes;
            true
        } else {
            false
        }
    }
}
