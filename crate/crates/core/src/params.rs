//! Learnable parameter bundles: the utility network plus (for the
//! non-summation mixer) the four hypernetworks, and the live/target pair.
//!
//! Binding order and visitation order are the same everywhere, so gradients
//! collected from a graph line up with optimizer state and checkpoints.

use crate::agent::{AgentLeaves, AgentNetParams};
use crate::graph::{Binder, Graph, NodeId};
use crate::mixing::{MixerKind, MixingLeaves, MixingNets};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Network width configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Attention layer width (all heads concatenated).
    pub attn_dim: usize,
    pub attn_heads: usize,
    /// GRU hidden width.
    pub rnn_dim: usize,
    /// Mixing network hidden width.
    pub mix_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            attn_dim: 128,
            attn_heads: 4,
            rnn_dim: 64,
            mix_dim: 32,
        }
    }
}

/// All learnable parameters of one network copy.
#[derive(Debug, Clone)]
pub struct NetParams {
    pub agent: AgentNetParams,
    /// Hypernetworks; absent for summation mixing.
    pub mixer: Option<MixingNets>,
}

impl NetParams {
    pub fn init<R: Rng>(
        feat_dim: usize,
        n_actions: usize,
        net: &NetConfig,
        mixer: MixerKind,
        rng: &mut R,
    ) -> Self {
        let agent = AgentNetParams::init(
            feat_dim,
            n_actions,
            net.attn_dim,
            net.attn_heads,
            net.rnn_dim,
            rng,
        );
        let mixer = match mixer {
            MixerKind::Qmix => Some(MixingNets::init(
                feat_dim,
                net.attn_dim,
                net.attn_heads,
                net.mix_dim,
                rng,
            )),
            MixerKind::Vdn => None,
        };
        NetParams { agent, mixer }
    }

    /// Bind every tensor as a graph leaf. Returns the typed leaf handles and
    /// the flat leaf order for gradient collection.
    pub fn bind(&self, g: &mut Graph) -> (NetLeaves, Vec<NodeId>) {
        let mut b = Binder::new(g);
        let agent = self.agent.bind(&mut b);
        let mixer = self.mixer.as_ref().map(|m| m.bind(&mut b));
        let order = b.order;
        (NetLeaves { agent, mixer }, order)
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a Tensor)) {
        self.agent.visit("agent", f);
        if let Some(m) = &self.mixer {
            m.visit("mixer", f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        self.agent.visit_mut(f);
        if let Some(m) = &mut self.mixer {
            m.visit_mut(f);
        }
    }

    pub fn n_tensors(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _| n += 1);
        n
    }

    pub fn n_values(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }

    /// Concatenation of every tensor in visitation order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_values());
        self.visit(&mut |_, t| out.extend_from_slice(t.data()));
        out
    }

    /// Overwrite parameters from a flat buffer in visitation order.
    pub fn load_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        self.visit_mut(&mut |t| {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        });
        assert_eq!(off, flat.len(), "flat parameter buffer size mismatch");
    }

    pub fn bitwise_eq(&self, other: &NetParams) -> bool {
        let a = self.flatten();
        let b = other.flatten();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits())
    }
}

/// Typed leaf handles of a bound [`NetParams`].
pub struct NetLeaves {
    pub agent: AgentLeaves,
    pub mixer: Option<MixingLeaves>,
}

/// Live parameters plus the periodically synchronized target copy.
#[derive(Debug, Clone)]
pub struct ParamSet {
    pub live: NetParams,
    pub target: NetParams,
}

impl ParamSet {
    pub fn new(live: NetParams) -> Self {
        let target = live.clone();
        ParamSet { live, target }
    }

    /// Whole-copy of live parameters into the target network.
    pub fn sync_target(&mut self) {
        self.target = self.live.clone();
    }
}
