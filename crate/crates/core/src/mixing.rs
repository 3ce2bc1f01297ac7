//! Attention-generated hypernetworks and monotonic value mixing.
//!
//! Four hypernetworks — one per mixing-network parameter — read the full
//! entity state with the agents as attention queries, so the generated
//! mixing network grows and shrinks with the number of agents. Weight
//! matrices are pushed through a softmax across the hidden dimension, which
//! keeps every entry strictly positive and hence the mixer monotone in each
//! utility: per-agent greedy actions jointly maximize the mixed value.
//! Hypernetworks are training-time machinery only and are not restricted by
//! partial observability.
//!
//! The auxiliary mixer for the imagined factorization stacks the input
//! layers generated under the in-group and out-group masks (2n factors) and
//! averages the remaining generated parameters of the two passes.

use crate::attention::{entity_ff, multi_head_attention, AttentionLeaves, AttentionParams, AttnLayout};
use crate::graph::{Binder, Graph, GraphError, NodeId};
use crate::tensor::{BoolMat, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Mixing-network flavor: the attention-generated monotonic mixer or plain
/// summation of factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixerKind {
    Qmix,
    Vdn,
}

/// One hypernetwork: entity encoder, masked attention with agent queries,
/// and an output projection to the mixing hidden width.
#[derive(Debug, Clone)]
pub struct HyperNetParams {
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub attn: AttentionParams,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl HyperNetParams {
    pub fn init<R: Rng>(
        feat_dim: usize,
        attn_dim: usize,
        n_heads: usize,
        mix_dim: usize,
        rng: &mut R,
    ) -> Self {
        let be = 1.0 / (feat_dim as f64).sqrt();
        let bo = 1.0 / (attn_dim as f64).sqrt();
        HyperNetParams {
            embed_w: Tensor::rand_uniform(&[feat_dim, attn_dim], -be, be, rng),
            embed_b: Tensor::rand_uniform(&[attn_dim], -be, be, rng),
            attn: AttentionParams::init(attn_dim, n_heads, attn_dim, rng),
            out_w: Tensor::rand_uniform(&[attn_dim, mix_dim], -bo, bo, rng),
            out_b: Tensor::rand_uniform(&[mix_dim], -bo, bo, rng),
        }
    }

    pub fn bind(&self, b: &mut Binder) -> HyperNetLeaves {
        HyperNetLeaves {
            embed_w: b.leaf(&self.embed_w),
            embed_b: b.leaf(&self.embed_b),
            attn: self.attn.bind(b),
            out_w: b.leaf(&self.out_w),
            out_b: b.leaf(&self.out_b),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a Tensor)) {
        f(format!("{prefix}.embed_w"), &self.embed_w);
        f(format!("{prefix}.embed_b"), &self.embed_b);
        self.attn.visit(&format!("{prefix}.attn"), f);
        f(format!("{prefix}.out_w"), &self.out_w);
        f(format!("{prefix}.out_b"), &self.out_b);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        f(&mut self.embed_w);
        f(&mut self.embed_b);
        self.attn.visit_mut(f);
        f(&mut self.out_w);
        f(&mut self.out_b);
    }
}

pub struct HyperNetLeaves {
    pub embed_w: NodeId,
    pub embed_b: NodeId,
    pub attn: AttentionLeaves,
    pub out_w: NodeId,
    pub out_b: NodeId,
}

/// The four hypernetworks generating the mixing network.
#[derive(Debug, Clone)]
pub struct MixingNets {
    pub w1: HyperNetParams,
    pub b1: HyperNetParams,
    pub w2: HyperNetParams,
    pub b2: HyperNetParams,
}

impl MixingNets {
    pub fn init<R: Rng>(
        feat_dim: usize,
        attn_dim: usize,
        n_heads: usize,
        mix_dim: usize,
        rng: &mut R,
    ) -> Self {
        MixingNets {
            w1: HyperNetParams::init(feat_dim, attn_dim, n_heads, mix_dim, rng),
            b1: HyperNetParams::init(feat_dim, attn_dim, n_heads, mix_dim, rng),
            w2: HyperNetParams::init(feat_dim, attn_dim, n_heads, mix_dim, rng),
            b2: HyperNetParams::init(feat_dim, attn_dim, n_heads, mix_dim, rng),
        }
    }

    pub fn bind(&self, b: &mut Binder) -> MixingLeaves {
        MixingLeaves {
            w1: self.w1.bind(b),
            b1: self.b1.bind(b),
            w2: self.w2.bind(b),
            b2: self.b2.bind(b),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a Tensor)) {
        self.w1.visit(&format!("{prefix}.w1"), f);
        self.b1.visit(&format!("{prefix}.b1"), f);
        self.w2.visit(&format!("{prefix}.w2"), f);
        self.b2.visit(&format!("{prefix}.b2"), f);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        self.w1.visit_mut(f);
        self.b1.visit_mut(f);
        self.w2.visit_mut(f);
        self.b2.visit_mut(f);
    }
}

pub struct MixingLeaves {
    pub w1: HyperNetLeaves,
    pub b1: HyperNetLeaves,
    pub w2: HyperNetLeaves,
    pub b2: HyperNetLeaves,
}

/// Generated mixer parameters as graph nodes, batched over `groups`
/// instances: `w1` stacks one `(n_factors, mix_dim)` block per instance;
/// `b1` and `w2` hold one row per instance; `b2` one scalar row per
/// instance.
pub struct MixerNodes {
    pub groups: usize,
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

fn hyper_forward(
    g: &mut Graph,
    lv: &HyperNetLeaves,
    x: NodeId,
    layout: AttnLayout,
    agent_indices: &[usize],
    mask: &BoolMat,
) -> Result<NodeId, GraphError> {
    let enc_pre = entity_ff(g, x, lv.embed_w, lv.embed_b)?;
    let enc = g.relu(enc_pre);
    let att = multi_head_attention(g, enc, layout, agent_indices, mask, &lv.attn)?;
    entity_ff(g, att, lv.out_w, lv.out_b)
}

/// Run the four hypernetworks and assemble mixer parameters.
///
/// `hyper_mask` selects which entities the hypernetworks may attend to:
/// all active entities for the standard value path, the in-group or
/// out-group mask for the imagined path. Per instance, the input-layer
/// matrix gets a softmax across the hidden axis per agent row; the `b1`
/// output is averaged over agents; `w2` is averaged over agents then
/// softmaxed; `b2` is the mean of all generated entries.
pub fn generate_mixer(
    g: &mut Graph,
    lv: &MixingLeaves,
    x: NodeId,
    layout: AttnLayout,
    agent_indices: &[usize],
    hyper_mask: &BoolMat,
) -> Result<MixerNodes, GraphError> {
    let na = agent_indices.len();
    let gc = layout.groups;
    let mix_dim = g.value(lv.w1.out_b).numel();

    let y_w1 = hyper_forward(g, &lv.w1, x, layout, agent_indices, hyper_mask)?;
    let w1 = g.softmax_rows(y_w1)?;

    let y_b1 = hyper_forward(g, &lv.b1, x, layout, agent_indices, hyper_mask)?;
    let b1 = g.mean_row_blocks(y_b1, na)?;

    let y_w2 = hyper_forward(g, &lv.w2, x, layout, agent_indices, hyper_mask)?;
    let w2_mean = g.mean_row_blocks(y_w2, na)?;
    let w2 = g.softmax_rows(w2_mean)?;

    let y_b2 = hyper_forward(g, &lv.b2, x, layout, agent_indices, hyper_mask)?;
    let b2_mean = g.mean_row_blocks(y_b2, na)?;
    let b2_sum = g.row_sum(b2_mean)?;
    let b2 = g.affine(b2_sum, 1.0 / mix_dim as f64, 0.0);

    Ok(MixerNodes {
        groups: gc,
        w1,
        b1,
        w2,
        b2,
    })
}

/// Monotonic two-layer mixer: `elu(q^T W1 + b1) . w2 + b2`, batched over
/// instances. `q` has one row per instance whose width matches the generated
/// `W1` factor count.
pub fn mix(g: &mut Graph, q: NodeId, m: &MixerNodes) -> Result<NodeId, GraphError> {
    let sq = g.value(q).shape().to_vec();
    let sw = g.value(m.w1).shape().to_vec();
    if sq.len() != 2 || sq[0] != m.groups || !sw[0].is_multiple_of(m.groups) || sq[1] != sw[0] / m.groups {
        return Err(GraphError::ShapeMismatch {
            op: "mix",
            detail: format!("q {sq:?} vs w1 {sw:?} over {} instances", m.groups),
        });
    }
    let pre = g.grouped_matmul(q, m.w1, m.groups)?;
    let pre = g.add(pre, m.b1)?;
    let act = g.elu(pre);
    let weighted = g.mul(act, m.w2)?;
    let summed = g.row_sum(weighted)?;
    g.add(summed, m.b2)
}

/// The 2n-factor auxiliary mixer: row-concatenate the input layers generated
/// under the in-group and out-group masks, average the remaining parameters,
/// and mix the concatenated utilities.
pub fn mix_aux(
    g: &mut Graph,
    q_in: NodeId,
    q_out: NodeId,
    generated_in: &MixerNodes,
    generated_out: &MixerNodes,
) -> Result<NodeId, GraphError> {
    if generated_in.groups != generated_out.groups {
        return Err(GraphError::ShapeMismatch {
            op: "mix_aux",
            detail: format!(
                "{} vs {} generated instances",
                generated_in.groups, generated_out.groups
            ),
        });
    }
    let groups = generated_in.groups;
    let w1 = g.interleave_rows(generated_in.w1, generated_out.w1, groups)?;
    let b1_sum = g.add(generated_in.b1, generated_out.b1)?;
    let b1 = g.affine(b1_sum, 0.5, 0.0);
    let w2_sum = g.add(generated_in.w2, generated_out.w2)?;
    let w2 = g.affine(w2_sum, 0.5, 0.0);
    let b2_sum = g.add(generated_in.b2, generated_out.b2)?;
    let b2 = g.affine(b2_sum, 0.5, 0.0);
    let q = g.concat_cols(&[q_in, q_out])?;
    mix(
        g,
        q,
        &MixerNodes {
            groups,
            w1,
            b1,
            w2,
            b2,
        },
    )
}

/// Summation mixing: the value is the plain sum of the factors.
pub fn mix_vdn(g: &mut Graph, q: NodeId) -> Result<NodeId, GraphError> {
    g.row_sum(q)
}

/// Concrete snapshot of one generated mixing network. Generated `w1` and
/// `w2` entries are strictly positive (softmax), which is what makes the
/// mixer monotone.
#[derive(Debug, Clone)]
pub struct MixerParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: f64,
}

impl MixerParams {
    /// Extract instance `group` from batched mixer nodes.
    pub fn from_graph(g: &Graph, m: &MixerNodes, group: usize) -> MixerParams {
        let w1 = g.value(m.w1);
        let (k, hm) = (w1.rows() / m.groups, w1.cols());
        let w1_slice = w1.data()[group * k * hm..(group + 1) * k * hm].to_vec();
        let b1 = g.value(m.b1).row(group).to_vec();
        let w2 = g.value(m.w2).row(group).to_vec();
        let b2 = g.value(m.b2).get2(group, 0);
        MixerParams {
            w1: Tensor::from_vec(&[k, hm], w1_slice),
            b1: Tensor::from_vec(&[hm], b1),
            w2: Tensor::from_vec(&[hm], w2),
            b2,
        }
    }

    /// Bind as constant single-instance mixer nodes.
    pub fn as_nodes(&self, g: &mut Graph) -> MixerNodes {
        let (k, hm) = (self.w1.rows(), self.w1.cols());
        let w1 = g.constant(Tensor::from_vec(&[k, hm], self.w1.data().to_vec()));
        let b1 = g.constant(Tensor::from_vec(&[1, hm], self.b1.data().to_vec()));
        let w2 = g.constant(Tensor::from_vec(&[1, hm], self.w2.data().to_vec()));
        let b2 = g.constant(Tensor::from_vec(&[1, 1], vec![self.b2]));
        MixerNodes {
            groups: 1,
            w1,
            b1,
            w2,
            b2,
        }
    }

    pub fn n_factors(&self) -> usize {
        self.w1.rows()
    }
}

/// Evaluate the mixer on a concrete utility vector.
pub fn mix_value(q: &[f64], p: &MixerParams) -> Result<f64, GraphError> {
    let mut g = Graph::new();
    let nodes = p.as_nodes(&mut g);
    let qn = g.constant(Tensor::from_vec(&[1, q.len()], q.to_vec()));
    let out = mix(&mut g, qn, &nodes)?;
    Ok(g.value(out).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcheck::finite_diff_at;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_nets(feat_dim: usize, mix_dim: usize, seed: u64) -> MixingNets {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MixingNets::init(feat_dim, 8, 2, mix_dim, &mut rng)
    }

    fn generate(
        nets: &MixingNets,
        x: &Tensor,
        agents: &[usize],
        mask: &BoolMat,
    ) -> MixerParams {
        let mut g = Graph::new();
        let mut b = Binder::new(&mut g);
        let lv = nets.bind(&mut b);
        let xn = g.constant(x.clone());
        let nodes = generate_mixer(
            &mut g,
            &lv,
            xn,
            AttnLayout::single(x.rows()),
            agents,
            mask,
        )
        .unwrap();
        MixerParams::from_graph(&g, &nodes, 0)
    }

    #[test]
    fn generated_w1_rows_are_simplex_points() {
        let nets = toy_nets(5, 4, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::rand_uniform(&[4, 5], -1.0, 1.0, &mut rng);
        let p = generate(&nets, &x, &[0, 1, 2], &BoolMat::ones(3, 4));
        for r in 0..3 {
            let row = p.w1.row(r);
            assert!(row.iter().all(|&v| v > 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(p.w2.data().iter().all(|&v| v > 0.0));
        assert!((p.w2.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn agent_permutation_permutes_w1_rows_only() {
        let nets = toy_nets(5, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::rand_uniform(&[4, 5], -1.0, 1.0, &mut rng);
        let mask = BoolMat::ones(3, 4);
        let p = generate(&nets, &x, &[0, 1, 2], &mask);
        let p_perm = generate(&nets, &x, &[2, 0, 1], &mask);
        for (orig, perm_row) in [(2usize, 0usize), (0, 1), (1, 2)] {
            for c in 0..4 {
                assert!((p.w1.get2(orig, c) - p_perm.w1.get2(perm_row, c)).abs() < 1e-15);
            }
        }
        for c in 0..4 {
            assert!((p.b1.data()[c] - p_perm.b1.data()[c]).abs() < 1e-12);
            assert!((p.w2.data()[c] - p_perm.w2.data()[c]).abs() < 1e-12);
        }
        assert!((p.b2 - p_perm.b2).abs() < 1e-12);
    }

    #[test]
    fn single_agent_b1_equals_its_head_output() {
        let nets = toy_nets(5, 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::rand_uniform(&[3, 5], -1.0, 1.0, &mut rng);
        let mask = BoolMat::ones(1, 3);
        let p = generate(&nets, &x, &[1], &mask);
        assert_eq!(p.w1.rows(), 1);

        // recompute the b1 hypernetwork head for the single agent
        let mut g = Graph::new();
        let mut b = Binder::new(&mut g);
        let lv = nets.bind(&mut b);
        let xn = g.constant(x.clone());
        let y = hyper_forward(&mut g, &lv.b1, xn, AttnLayout::single(3), &[1], &mask).unwrap();
        for (a, e) in p.b1.data().iter().zip(g.value(y).row(0)) {
            assert_eq!(a.to_bits(), e.to_bits());
        }
    }

    #[test]
    fn mix_collapses_to_b2_without_weights() {
        let p = MixerParams {
            w1: Tensor::zeros(&[2, 3]),
            b1: Tensor::from_vec(&[3], vec![0.4, -1.2, 2.0]),
            w2: Tensor::zeros(&[3]),
            b2: 0.125,
        };
        for q in [[0.0, 0.0], [5.0, -7.0], [100.0, 3.0]] {
            assert!((mix_value(&q, &p).unwrap() - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn mix_hand_computed_instance() {
        // q^T W1 = [1.0, 2.0]; + b1 = [1.1, 1.8]; elu keeps positives;
        // dot with w2 = 0.33 + 1.26; + b2 = 1.64
        let p = MixerParams {
            w1: Tensor::from_rows(&[vec![0.5, 0.5], vec![0.25, 0.75]]),
            b1: Tensor::from_vec(&[2], vec![0.1, -0.2]),
            w2: Tensor::from_vec(&[2], vec![0.3, 0.7]),
            b2: 0.05,
        };
        let v = mix_value(&[1.0, 2.0], &p).unwrap();
        assert!((v - 1.64).abs() < 1e-12, "{v}");
    }

    #[test]
    fn mix_length_mismatch_is_an_error() {
        let p = MixerParams {
            w1: Tensor::zeros(&[2, 3]),
            b1: Tensor::zeros(&[3]),
            w2: Tensor::zeros(&[3]),
            b2: 0.0,
        };
        assert!(mix_value(&[1.0, 2.0, 3.0], &p).is_err());
    }

    #[test]
    fn generated_mixers_are_monotone() {
        let nets = toy_nets(5, 4, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..20 {
            let na = 1 + trial % 3;
            let x = Tensor::rand_uniform(&[4, 5], -1.0, 1.0, &mut rng);
            let agents: Vec<usize> = (0..na).collect();
            let p = generate(&nets, &x, &agents, &BoolMat::ones(na, 4));
            let q0: Vec<f64> = (0..na).map(|_| rng.gen_range(-2.0..2.0)).collect();
            for i in 0..na {
                let d = finite_diff_at(&q0, i, 1e-6, |q| mix_value(q, &p).unwrap());
                assert!(d >= -1e-9, "slope {d} for factor {i}");
            }
        }
    }

    #[test]
    fn aux_mixer_with_identical_passes_scales_w1() {
        // When both generated passes coincide and q_in = q_out = q, the
        // auxiliary mix equals the plain mix with W1 doubled.
        let nets = toy_nets(5, 4, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Tensor::rand_uniform(&[3, 5], -1.0, 1.0, &mut rng);
        let full = BoolMat::ones(2, 3);

        let mut g = Graph::new();
        let mut b = Binder::new(&mut g);
        let lv = nets.bind(&mut b);
        let xn = g.constant(x.clone());
        let layout = AttnLayout::single(3);
        let gen_a = generate_mixer(&mut g, &lv, xn, layout, &[0, 1], &full).unwrap();
        let gen_b = generate_mixer(&mut g, &lv, xn, layout, &[0, 1], &full).unwrap();
        let q0 = Tensor::from_rows(&[vec![0.7, -0.3]]);
        let q = g.constant(q0.clone());
        let aux = mix_aux(&mut g, q, q, &gen_a, &gen_b).unwrap();
        let aux_v = g.value(aux).data()[0];

        let mut p = MixerParams::from_graph(&g, &gen_a, 0);
        for v in p.w1.data_mut() {
            *v *= 2.0;
        }
        let direct = mix_value(q0.data(), &p).unwrap();
        assert!((aux_v - direct).abs() < 1e-12, "{aux_v} vs {direct}");
    }

    #[test]
    fn aux_mixer_is_monotone_in_all_factors() {
        use crate::partition::{build_group_masks, PartitionVector};
        let nets = toy_nets(5, 4, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let x = Tensor::rand_uniform(&[4, 5], -1.0, 1.0, &mut rng);
            let m = PartitionVector::new((0..4).map(|_| rng.gen_bool(0.5)).collect());
            let (mi, mo) = build_group_masks(&m, &[0, 1]).unwrap();

            let mut g = Graph::new();
            let mut b = Binder::new(&mut g);
            let lv = nets.bind(&mut b);
            let xn = g.constant(x.clone());
            let layout = AttnLayout::single(4);
            let gen_i = generate_mixer(&mut g, &lv, xn, layout, &[0, 1], &mi).unwrap();
            let gen_o = generate_mixer(&mut g, &lv, xn, layout, &[0, 1], &mo).unwrap();
            let pi = MixerParams::from_graph(&g, &gen_i, 0);
            let po = MixerParams::from_graph(&g, &gen_o, 0);

            // aux mix as a concrete function of the 4 factors
            let eval = |qs: &[f64]| -> f64 {
                let mut g2 = Graph::new();
                let ni = pi.as_nodes(&mut g2);
                let no = po.as_nodes(&mut g2);
                let qi = g2.constant(Tensor::from_vec(&[1, 2], qs[..2].to_vec()));
                let qo = g2.constant(Tensor::from_vec(&[1, 2], qs[2..].to_vec()));
                let out = mix_aux(&mut g2, qi, qo, &ni, &no).unwrap();
                g2.value(out).data()[0]
            };
            let q0: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            for i in 0..4 {
                let d = finite_diff_at(&q0, i, 1e-6, eval);
                assert!(d >= -1e-9, "slope {d} for factor {i}");
            }
        }
    }

    #[test]
    fn aux_mixer_hand_computed_instance() {
        // two identical hand-set passes, q_in = [1, 2], q_out = [0.5, -1]
        // W1 columns under concatenation: q_cat^T W1_cat = qi^T W1 + qo^T W1
        let p = MixerParams {
            w1: Tensor::from_rows(&[vec![0.5, 0.5], vec![0.25, 0.75]]),
            b1: Tensor::from_vec(&[2], vec![0.1, -0.2]),
            w2: Tensor::from_vec(&[2], vec![0.3, 0.7]),
            b2: 0.05,
        };
        let mut g = Graph::new();
        let na = p.as_nodes(&mut g);
        let nb = p.as_nodes(&mut g);
        let qi = g.constant(Tensor::from_rows(&[vec![1.0, 2.0]]));
        let qo = g.constant(Tensor::from_rows(&[vec![0.5, -1.0]]));
        let out = mix_aux(&mut g, qi, qo, &na, &nb).unwrap();
        // pre = [1.0, 2.0] + [0.5*0.5 + (-1)*0.25, 0.5*0.5 + (-1)*0.75] = [1.0, 1.5]
        // + b1 = [1.1, 1.3]; elu(+) = same; dot w2 = 0.33 + 0.91; + 0.05 = 1.29
        let v = g.value(out).data()[0];
        assert!((v - 1.29).abs() < 1e-12, "{v}");
    }

    #[test]
    fn vdn_mixing_is_summation() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]));
        let out = mix_vdn(&mut g, q).unwrap();
        assert_eq!(g.value(out).data(), &[6.0]);

        // 2n-factor case is just a longer sum
        let q6 = g.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.5]]));
        let out6 = mix_vdn(&mut g, q6).unwrap();
        assert_eq!(g.value(out6).data(), &[6.0]);
    }

    proptest::proptest! {
        #[test]
        fn vdn_is_linear(
            a in proptest::collection::vec(-10.0f64..10.0, 4),
            b in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            let mut g = Graph::new();
            let qa = g.constant(Tensor::from_vec(&[1, 4], a.clone()));
            let qb = g.constant(Tensor::from_vec(&[1, 4], b.clone()));
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let qs = g.constant(Tensor::from_vec(&[1, 4], sum));
            let na = mix_vdn(&mut g, qa).unwrap();
            let nb = mix_vdn(&mut g, qb).unwrap();
            let ns = mix_vdn(&mut g, qs).unwrap();
            let (va, vb, vs) = (
                g.value(na).data()[0],
                g.value(nb).data()[0],
                g.value(ns).data()[0],
            );
            proptest::prop_assert!((va + vb - vs).abs() < 1e-9);
        }
    }

    #[test]
    fn greedy_actions_maximize_mixed_value_exactly() {
        // brute-force joint-action enumeration on 2 agents x 3 actions
        use crate::agent::greedy_actions;
        let nets = toy_nets(5, 4, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..50 {
            let x = Tensor::rand_uniform(&[3, 5], -1.0, 1.0, &mut rng);
            let p = generate(&nets, &x, &[0, 1], &BoolMat::ones(2, 3));
            let q = Tensor::rand_uniform(&[2, 3], -2.0, 2.0, &mut rng);
            let avail = BoolMat::ones(2, 3);
            let greedy = greedy_actions(&q, &avail).unwrap();
            let greedy_val = mix_value(
                &[q.get2(0, greedy[0]), q.get2(1, greedy[1])],
                &p,
            )
            .unwrap();
            let mut best = f64::NEG_INFINITY;
            for a0 in 0..3 {
                for a1 in 0..3 {
                    let v = mix_value(&[q.get2(0, a0), q.get2(1, a1)], &p).unwrap();
                    if v > best {
                        best = v;
                    }
                }
            }
            assert_eq!(greedy_val.to_bits(), best.to_bits());
        }
    }
}
