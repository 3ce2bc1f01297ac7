//! Acceptance suite. Each test covers one numbered criterion and prints a
//! PASS line when it holds. Criteria 7 and 8 are full learning runs lasting
//! hours; they are implemented faithfully but marked `#[ignore]` so the
//! default suite stays fast — run them with `cargo test --test acceptance
//! -- --ignored --nocapture`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refil_core::agent::{self, greedy_actions, AgentNetParams, StreamNodes, TripleMasks};
use refil_core::attention::{attention_head, entity_ff, multi_head_attention, AttentionParams, AttnLayout};
use refil_core::config::{Algorithm, RunConfig};
use refil_core::env::{EnvConfig, Environment, GroupMatchingEnv};
use refil_core::episode::Episode;
use refil_core::graph::{gru_cell, Binder, Graph, GruParams};
use refil_core::learner::{self, assemble_batch, compute_targets, LearnerConfig};
use refil_core::metrics::read_metrics;
use refil_core::mixing::{generate_mixer, mix, mix_aux, mix_value, MixerKind, MixerParams, MixingNets};
use refil_core::numcheck::{finite_diff_at, rel_err};
use refil_core::params::{NetConfig, NetParams, ParamSet};
use refil_core::partition::{
    apply_observability, build_group_masks, sample_partition, PartitionStrategy, PartitionVector,
};
use refil_core::runner::{run_train, CHECKPOINT_FILE, METRICS_FILE};
use refil_core::tensor::{BoolMat, Tensor};
use std::path::{Path, PathBuf};
use std::time::Instant;

fn pass(criterion: usize, detail: &str) {
    println!("criterion {criterion} PASS - {detail}");
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("refil-acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

// ---------------------------------------------------------------------------
// criterion 1: mask algebra

#[test]
fn criterion_1_mask_algebra() {
    let start = Instant::now();
    let mut checked = 0usize;

    let verify = |m: &PartitionVector, agents: &[usize], obs: &BoolMat| {
        let ne = m.len();
        let (mi, mo) = build_group_masks(m, agents).unwrap();
        assert_eq!(mi.or(&mo), BoolMat::ones(agents.len(), ne));
        assert_eq!(mi.and(&mo).count_ones(), 0);
        for (r, &a) in agents.iter().enumerate() {
            assert!(mi.get(r, a));
        }
        let (oi, oo) = apply_observability(&mi, &mo, obs).unwrap();
        assert_eq!(oi.or(&oo), *obs);
        assert_eq!(oi.and(&oo).count_ones(), 0);
    };

    // exhaustive over all partition vectors and agent subsets up to 4 entities
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for ne in 1..=4usize {
        for bits in 0..(1u32 << ne) {
            let m = PartitionVector::new((0..ne).map(|e| bits >> e & 1 == 1).collect());
            for subset in 1..(1u32 << ne) {
                let agents: Vec<usize> = (0..ne).filter(|e| subset >> e & 1 == 1).collect();
                let obs = BoolMat::from_fn(agents.len(), ne, |r, e| {
                    agents[r] == e || rng.gen_bool(0.5)
                });
                verify(&m, &agents, &obs);
                checked += 1;
            }
        }
    }

    // 1000 random larger instances
    for _ in 0..1000 {
        let ne = rng.gen_range(5..=16);
        let m = PartitionVector::new((0..ne).map(|_| rng.gen_bool(0.5)).collect());
        let na = rng.gen_range(1..=ne);
        let agents: Vec<usize> = (0..na).collect();
        let obs = BoolMat::from_fn(na, ne, |r, e| agents[r] == e || rng.gen_bool(0.5));
        verify(&m, &agents, &obs);
        checked += 1;
    }

    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 1.0,
        "mask algebra suite took {elapsed:?}"
    );
    pass(1, &format!("{checked} instances in {elapsed:?}"));
}

// ---------------------------------------------------------------------------
// criterion 2: gradients against central finite differences

struct FdStats {
    coords: usize,
    worst: f64,
}

/// Compare analytic gradients against central finite differences on up to
/// `max_coords` randomly chosen coordinates.
#[allow(clippy::too_many_arguments)]
fn fd_compare(
    name: &str,
    x0: &[f64],
    analytic: &[f64],
    tol: f64,
    h: f64,
    rng: &mut ChaCha8Rng,
    max_coords: usize,
    stats: &mut FdStats,
    mut eval: impl FnMut(&[f64]) -> f64,
) {
    assert_eq!(x0.len(), analytic.len(), "{name}: gradient length");
    let mut order: Vec<usize> = (0..x0.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    for &i in order.iter().take(max_coords) {
        let fd = finite_diff_at(x0, i, h, &mut eval);
        let err = rel_err(analytic[i], fd);
        assert!(
            err < tol,
            "{name}: coord {i} analytic {} vs fd {fd} (rel err {err})",
            analytic[i]
        );
        stats.coords += 1;
        if err > stats.worst {
            stats.worst = err;
        }
    }
}

#[test]
fn criterion_2_gradient_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut stats = FdStats {
        coords: 0,
        worst: 0.0,
    };
    let layer_tol = 1e-4;
    let loss_tol = 1e-3;
    let h = 1e-5;

    for instance in 0..20 {
        let ne = rng.gen_range(2..=5usize);
        let na = rng.gen_range(1..=ne.min(3));
        let d = rng.gen_range(2..=4usize);
        let agents: Vec<usize> = (0..na).collect();
        let mask = BoolMat::from_fn(na, ne, |r, e| agents[r] == e || rng.gen_bool(0.7));

        // matmul + elu + relu chain
        let a0 = Tensor::rand_uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let b0 = Tensor::rand_uniform(&[4, 2], -1.0, 1.0, &mut rng);
        let chain = |g: &mut Graph, a: refil_core::graph::NodeId, b0: &Tensor| {
            let b = g.constant(b0.clone());
            let p = g.matmul(a, b).unwrap();
            let e = g.elu(p);
            let r = g.relu(p);
            let s = g.add(e, r).unwrap();
            g.sum_all(s)
        };
        let mut g = Graph::new();
        let a = g.leaf(a0.clone());
        let loss = chain(&mut g, a, &b0);
        g.backward(loss).unwrap();
        let analytic = g.grad(a).unwrap().to_vec();
        fd_compare(
            "matmul+elu+relu",
            a0.data(),
            &analytic,
            layer_tol,
            h,
            &mut rng,
            6,
            &mut stats,
            |xs| {
                let mut g = Graph::new();
                let a = g.constant(Tensor::from_vec(&[3, 4], xs.to_vec()));
                let loss = chain(&mut g, a, &b0);
                g.value(loss).data()[0]
            },
        );

        // masked softmax under this instance's mask
        let logits0 = Tensor::rand_uniform(&[na, ne], -2.0, 2.0, &mut rng);
        let wsum = Tensor::rand_uniform(&[na, ne], -1.0, 1.0, &mut rng);
        let msm = |g: &mut Graph, x: refil_core::graph::NodeId, w: &Tensor, mask: &BoolMat| {
            let y = g.masked_softmax(x, mask).unwrap();
            let w = g.constant(w.clone());
            let p = g.mul(y, w).unwrap();
            g.sum_all(p)
        };
        let mut g = Graph::new();
        let x = g.leaf(logits0.clone());
        let loss = msm(&mut g, x, &wsum, &mask);
        g.backward(loss).unwrap();
        let analytic = g.grad(x).unwrap().to_vec();
        fd_compare(
            "masked_softmax",
            logits0.data(),
            &analytic,
            layer_tol,
            h,
            &mut rng,
            6,
            &mut stats,
            |xs| {
                let mut g = Graph::new();
                let x = g.constant(Tensor::from_vec(&[na, ne], xs.to_vec()));
                let loss = msm(&mut g, x, &wsum, &mask);
                g.value(loss).data()[0]
            },
        );

        // entity feedforward + multi-head attention over x
        let attn = AttentionParams::init(d, 2, 4, &mut rng);
        let x0 = Tensor::rand_uniform(&[ne, d], -1.0, 1.0, &mut rng);
        let mha_loss = |g: &mut Graph, x: refil_core::graph::NodeId, attn: &AttentionParams| {
            let mut b = Binder::new(g);
            let lv = attn.bind(&mut b);
            let out =
                multi_head_attention(g, x, AttnLayout::single(ne), &agents, &mask, &lv).unwrap();
            g.sum_all(out)
        };
        let mut g = Graph::new();
        let x = g.leaf(x0.clone());
        let loss = mha_loss(&mut g, x, &attn);
        g.backward(loss).unwrap();
        let analytic = g.grad(x).unwrap().to_vec();
        fd_compare(
            "multi_head_attention(x)",
            x0.data(),
            &analytic,
            layer_tol,
            h,
            &mut rng,
            6,
            &mut stats,
            |xs| {
                let mut g = Graph::new();
                let x = g.constant(Tensor::from_vec(&[ne, d], xs.to_vec()));
                let loss = mha_loss(&mut g, x, &attn);
                g.value(loss).data()[0]
            },
        );

        // single attention head with respect to its projection weights
        let head0 = attn.heads[0].clone();
        let head_flat: Vec<f64> = [&head0.w_q, &head0.w_k, &head0.w_v]
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect();
        let head_eval = |flat: &[f64], want_grad: bool, x0: &Tensor| -> (f64, Vec<f64>) {
            let n = d * 2;
            let hp = refil_core::attention::HeadParams {
                w_q: Tensor::from_vec(&[d, 2], flat[..n].to_vec()),
                w_k: Tensor::from_vec(&[d, 2], flat[n..2 * n].to_vec()),
                w_v: Tensor::from_vec(&[d, 2], flat[2 * n..].to_vec()),
            };
            let mut g = Graph::new();
            let mut b = Binder::new(&mut g);
            let lv = refil_core::attention::HeadLeaves {
                w_q: b.leaf(&hp.w_q),
                w_k: b.leaf(&hp.w_k),
                w_v: b.leaf(&hp.w_v),
            };
            let order = b.order.clone();
            let x = g.constant(x0.clone());
            let out = attention_head(&mut g, x, AttnLayout::single(ne), &agents, &mask, &lv).unwrap();
            let loss = g.sum_all(out);
            let v = g.value(loss).data()[0];
            if !want_grad {
                return (v, Vec::new());
            }
            g.backward(loss).unwrap();
            let mut grads = Vec::new();
            for id in order {
                grads.extend_from_slice(g.grad(id).unwrap_or(&[]));
            }
            (v, grads)
        };
        let (_, analytic) = head_eval(&head_flat, true, &x0);
        fd_compare(
            "attention_head(params)",
            &head_flat,
            &analytic,
            layer_tol,
            h,
            &mut rng,
            6,
            &mut stats,
            |xs| head_eval(xs, false, &x0).0,
        );

        // entity_ff with respect to weights and bias
        let w0 = Tensor::rand_uniform(&[d, 3], -1.0, 1.0, &mut rng);
        let bias0 = Tensor::rand_uniform(&[3], -1.0, 1.0, &mut rng);
        let eff_flat: Vec<f64> = w0.data().iter().chain(bias0.data()).copied().collect();
        let eff_eval = |flat: &[f64], want_grad: bool| -> (f64, Vec<f64>) {
            let w = Tensor::from_vec(&[d, 3], flat[..d * 3].to_vec());
            let bias = Tensor::from_vec(&[3], flat[d * 3..].to_vec());
            let mut g = Graph::new();
            let wl = g.leaf(w);
            let bl = g.leaf(bias);
            let x = g.constant(x0.clone());
            let out = entity_ff(&mut g, x, wl, bl).unwrap();
            let act = g.tanh(out);
            let loss = g.sum_all(act);
            let v = g.value(loss).data()[0];
            if !want_grad {
                return (v, Vec::new());
            }
            g.backward(loss).unwrap();
            let mut grads = g.grad(wl).unwrap().to_vec();
            grads.extend_from_slice(g.grad(bl).unwrap());
            (v, grads)
        };
        let (_, analytic) = eff_eval(&eff_flat, true);
        fd_compare(
            "entity_ff(params)",
            &eff_flat,
            &analytic,
            layer_tol,
            h,
            &mut rng,
            4,
            &mut stats,
            |xs| eff_eval(xs, false).0,
        );

        // three-step GRU unroll with respect to all cell parameters
        let gru0 = GruParams::init(2, 3, &mut rng);
        let gxs: Vec<Tensor> = (0..3)
            .map(|_| Tensor::rand_uniform(&[na, 2], -1.0, 1.0, &mut rng))
            .collect();
        let mut gru_flat = Vec::new();
        {
            let mut p = gru0.clone();
            p.visit_mut(&mut |t| gru_flat.extend_from_slice(t.data()));
        }
        let gru_eval = |flat: &[f64], want_grad: bool| -> (f64, Vec<f64>) {
            let mut p = gru0.clone();
            let mut off = 0;
            p.visit_mut(&mut |t| {
                let n = t.numel();
                t.data_mut().copy_from_slice(&flat[off..off + n]);
                off += n;
            });
            let mut g = Graph::new();
            let mut b = Binder::new(&mut g);
            let lv = p.bind(&mut b);
            let order = b.order.clone();
            let mut hdn = g.constant(Tensor::zeros(&[na, 3]));
            for x0 in &gxs {
                let x = g.constant(x0.clone());
                hdn = gru_cell(&mut g, x, hdn, &lv).unwrap();
            }
            let loss = g.sum_all(hdn);
            let v = g.value(loss).data()[0];
            if !want_grad {
                return (v, Vec::new());
            }
            g.backward(loss).unwrap();
            let mut grads = Vec::new();
            for id in order {
                grads.extend_from_slice(g.grad(id).unwrap_or(&[]));
            }
            (v, grads)
        };
        let (_, analytic) = gru_eval(&gru_flat, true);
        fd_compare(
            "gru_cell(3 steps)",
            &gru_flat,
            &analytic,
            layer_tol,
            h,
            &mut rng,
            6,
            &mut stats,
            |xs| gru_eval(xs, false).0,
        );

        // generated mixer with respect to the utilities entering it
        if instance < 10 {
            let nets = MixingNets::init(d, 4, 2, 4, &mut rng);
            let q0: Vec<f64> = (0..na).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let hyper_mask = BoolMat::ones(na, ne);
            let mixer_eval = |q: &[f64], want_grad: bool| -> (f64, Vec<f64>) {
                let mut g = Graph::new();
                let mut b = Binder::new(&mut g);
                let lv = nets.bind(&mut b);
                let x = g.constant(x0.clone());
                let nodes = generate_mixer(
                    &mut g,
                    &lv,
                    x,
                    AttnLayout::single(ne),
                    &agents,
                    &hyper_mask,
                )
                .unwrap();
                let qn = g.leaf(Tensor::from_vec(&[1, na], q.to_vec()));
                let out = mix(&mut g, qn, &nodes).unwrap();
                let loss = g.sum_all(out);
                let v = g.value(loss).data()[0];
                if !want_grad {
                    return (v, Vec::new());
                }
                g.backward(loss).unwrap();
                (v, g.grad(qn).unwrap().to_vec())
            };
            let (_, analytic) = mixer_eval(&q0, true);
            fd_compare(
                "mix(q)",
                &q0,
                &analytic,
                layer_tol,
                h,
                &mut rng,
                na,
                &mut stats,
                |xs| mixer_eval(xs, false).0,
            );
        }
    }

    // both full losses on toy batches
    for instance in 0..20 {
        let env_cfg = EnvConfig {
            n_agents: 2 + instance % 2,
            n_cells: 3,
            n_groups: 2,
            step_limit: 3,
        };
        let net_cfg = NetConfig {
            attn_dim: 8,
            attn_heads: 2,
            rnn_dim: 4,
            mix_dim: 4,
        };
        let mixer_kind = if instance % 3 == 2 {
            MixerKind::Vdn
        } else {
            MixerKind::Qmix
        };
        let mut env = GroupMatchingEnv::new(
            env_cfg.clone(),
            ChaCha8Rng::seed_from_u64(100 + instance as u64),
        )
        .unwrap();
        let episodes: Vec<Episode> = (0..2)
            .map(|_| random_episode(&mut env, &mut rng))
            .collect();
        let refs: Vec<&Episode> = episodes.iter().collect();
        let strategy = PartitionStrategy::Random { groups: 2 };
        let batch = assemble_batch(&refs, Some(&strategy), &mut rng);

        let params = ParamSet::new(NetParams::init(
            env_cfg.feature_dim(),
            3,
            &net_cfg,
            mixer_kind,
            &mut rng,
        ));
        let targets = compute_targets(&batch, &params, mixer_kind, 0.99).unwrap();

        for aux in [false, true] {
            let flat = params.live.flatten();
            // analytic gradient via one backward pass
            let mut g = Graph::new();
            let (lv, order) = params.live.bind(&mut g);
            let loss_node = if aux {
                learner::build_aux_loss(&mut g, &lv, &batch, mixer_kind, &targets).unwrap()
            } else {
                learner::build_q_loss(&mut g, &lv, &batch, mixer_kind, &targets).unwrap()
            };
            g.backward(loss_node).unwrap();
            let mut analytic = Vec::with_capacity(flat.len());
            for id in order {
                match g.grad(id) {
                    Some(gr) => analytic.extend_from_slice(gr),
                    None => analytic.extend(std::iter::repeat_n(0.0, g.value(id).numel())),
                }
            }

            let name = if aux { "loss_aux" } else { "loss_q" };
            fd_compare(
                name,
                &flat,
                &analytic,
                loss_tol,
                h,
                &mut rng,
                8,
                &mut stats,
                |xs| {
                    let mut net = params.live.clone();
                    net.load_flat(xs);
                    if aux {
                        learner::loss_aux(&batch, &net, mixer_kind, &targets).unwrap()
                    } else {
                        learner::loss_q(&batch, &net, mixer_kind, &targets).unwrap()
                    }
                },
            );
        }
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "gradient suite took {elapsed:?}");
    pass(
        2,
        &format!(
            "{} coordinates checked, worst rel err {:.2e}, {elapsed:?}",
            stats.coords, stats.worst
        ),
    );
}

fn random_episode(env: &mut GroupMatchingEnv, rng: &mut ChaCha8Rng) -> Episode {
    let (state, avail) = env.reset();
    let gt = env.ground_truth_groups();
    let mut ep = Episode {
        states: vec![state],
        avail: vec![avail],
        actions: Vec::new(),
        rewards: Vec::new(),
        terminated: Vec::new(),
        ground_truth: gt,
        won: false,
    };
    loop {
        let actions: Vec<usize> = (0..env.n_agents())
            .map(|_| rng.gen_range(0..env.n_actions()))
            .collect();
        let out = env.step(&actions).unwrap();
        ep.actions.push(actions);
        ep.rewards.push(out.reward);
        ep.terminated.push(out.terminated);
        ep.states.push(out.state);
        ep.avail.push(out.avail);
        if out.terminated {
            ep.won = out.info.win;
            return ep;
        }
    }
}

// ---------------------------------------------------------------------------
// criterion 3: monotonicity and argmax consistency

#[test]
fn criterion_3_monotone_mixing() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked_std = 0usize;
    let mut checked_aux = 0usize;

    for trial in 0..100 {
        let ne = rng.gen_range(2..=5usize);
        let na = rng.gen_range(1..=ne.min(4));
        let d = 4;
        let agents: Vec<usize> = (0..na).collect();
        let nets = MixingNets::init(d, 8, 2, 4, &mut rng);
        let x = Tensor::rand_uniform(&[ne, d], -1.0, 1.0, &mut rng);

        // n-factor mixer
        let mut g = Graph::new();
        let mut b = Binder::new(&mut g);
        let lv = nets.bind(&mut b);
        let xn = g.constant(x.clone());
        let full = BoolMat::ones(na, ne);
        let nodes =
            generate_mixer(&mut g, &lv, xn, AttnLayout::single(ne), &agents, &full).unwrap();
        let p = MixerParams::from_graph(&g, &nodes, 0);
        assert!(p.w1.data().iter().all(|&v| v > 0.0));
        assert!(p.w2.data().iter().all(|&v| v > 0.0));
        let q0: Vec<f64> = (0..na).map(|_| rng.gen_range(-2.0..2.0)).collect();
        for i in 0..na {
            let slope = finite_diff_at(&q0, i, 1e-6, |q| mix_value(q, &p).unwrap());
            assert!(slope >= -1e-9, "trial {trial}: slope {slope} for factor {i}");
        }
        checked_std += 1;

        // 2n-factor auxiliary mixer under a random partition
        let m = sample_partition(ne, &mut rng);
        let (mi, mo) = build_group_masks(&m, &agents).unwrap();
        let gen_in =
            generate_mixer(&mut g, &lv, xn, AttnLayout::single(ne), &agents, &mi).unwrap();
        let gen_out =
            generate_mixer(&mut g, &lv, xn, AttnLayout::single(ne), &agents, &mo).unwrap();
        let pi = MixerParams::from_graph(&g, &gen_in, 0);
        let po = MixerParams::from_graph(&g, &gen_out, 0);
        let eval_aux = |qs: &[f64]| -> f64 {
            let mut g2 = Graph::new();
            let ni = pi.as_nodes(&mut g2);
            let no = po.as_nodes(&mut g2);
            let qi = g2.constant(Tensor::from_vec(&[1, na], qs[..na].to_vec()));
            let qo = g2.constant(Tensor::from_vec(&[1, na], qs[na..].to_vec()));
            let out = mix_aux(&mut g2, qi, qo, &ni, &no).unwrap();
            g2.value(out).data()[0]
        };
        let q0: Vec<f64> = (0..2 * na).map(|_| rng.gen_range(-2.0..2.0)).collect();
        for i in 0..2 * na {
            let slope = finite_diff_at(&q0, i, 1e-6, eval_aux);
            assert!(slope >= -1e-9, "trial {trial}: aux slope {slope} factor {i}");
        }
        checked_aux += 1;
    }

    // brute-force argmax consistency: 2 agents x 3 actions
    let mut consistent = 0usize;
    for _ in 0..50 {
        let nets = MixingNets::init(4, 8, 2, 4, &mut rng);
        let x = Tensor::rand_uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let mut b = Binder::new(&mut g);
        let lv = nets.bind(&mut b);
        let xn = g.constant(x);
        let nodes = generate_mixer(
            &mut g,
            &lv,
            xn,
            AttnLayout::single(3),
            &[0, 1],
            &BoolMat::ones(2, 3),
        )
        .unwrap();
        let p = MixerParams::from_graph(&g, &nodes, 0);
        let q = Tensor::rand_uniform(&[2, 3], -2.0, 2.0, &mut rng);
        let greedy = greedy_actions(&q, &BoolMat::ones(2, 3)).unwrap();
        let greedy_val = mix_value(&[q.get2(0, greedy[0]), q.get2(1, greedy[1])], &p).unwrap();
        let mut best = f64::NEG_INFINITY;
        for a0 in 0..3 {
            for a1 in 0..3 {
                best = best.max(mix_value(&[q.get2(0, a0), q.get2(1, a1)], &p).unwrap());
            }
        }
        assert_eq!(
            greedy_val.to_bits(),
            best.to_bits(),
            "greedy {greedy_val} vs brute force {best}"
        );
        consistent += 1;
    }

    pass(
        3,
        &format!(
            "{checked_std} standard + {checked_aux} auxiliary mixers monotone, \
             {consistent} exact argmax enumerations"
        ),
    );
}

// ---------------------------------------------------------------------------
// criterion 4: decentralization under partial observability

#[test]
fn criterion_4_decentralization() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (ne, na, d, steps) = (4usize, 2usize, 5usize, 10usize);
    let agents: Vec<usize> = (0..na).collect();
    // agent 0 never observes entity 3; agent 1 observes everything
    let obs = BoolMat::from_rows(&[
        vec![true, true, true, false],
        vec![true, true, true, true],
    ]);
    let params = AgentNetParams::init(d, 3, 16, 2, 8, &mut rng);
    let xs: Vec<Tensor> = (0..steps)
        .map(|_| Tensor::rand_uniform(&[ne, d], -1.0, 1.0, &mut rng))
        .collect();

    let rollout = |states: &[Tensor]| -> Vec<Vec<f64>> {
        let mut hidden = Tensor::zeros(&[na, 8]);
        let mut qs = Vec::with_capacity(states.len());
        for x in states {
            let mut g = Graph::new();
            let mut b = Binder::new(&mut g);
            let lv = params.bind(&mut b);
            let xn = g.constant(x.clone());
            let hn = g.constant(hidden.clone());
            let (q, h) =
                agent::utilities(&mut g, &lv, xn, AttnLayout::single(ne), &agents, &obs, hn)
                    .unwrap();
            qs.push(g.value(q).data().to_vec());
            hidden = g.value(h).clone();
        }
        qs
    };

    let base = rollout(&xs);
    // perturb the unobserved entity in every step
    let perturbed_states: Vec<Tensor> = xs
        .iter()
        .map(|x| {
            let mut p = x.clone();
            for c in 0..d {
                p.set2(3, c, rng.gen_range(10.0..20.0));
            }
            p
        })
        .collect();
    let perturbed = rollout(&perturbed_states);

    let mut agent1_diff = false;
    for (t, (qb, qp)) in base.iter().zip(&perturbed).enumerate() {
        // agent 0's utilities are bit-identical through the whole episode,
        // including effects routed through the recurrent state
        for c in 0..3 {
            assert_eq!(
                qb[c].to_bits(),
                qp[c].to_bits(),
                "step {t}: agent 0 utility changed"
            );
        }
        if qb[3..] != qp[3..] {
            agent1_diff = true;
        }
    }
    assert!(agent1_diff, "perturbation should reach the observing agent");
    pass(4, &format!("{steps}-step episode bit-identical for the blinded agent"));
}

// ---------------------------------------------------------------------------
// criterion 5: degenerate partition identity

#[test]
fn criterion_5_degenerate_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (ne, na, d, steps) = (4usize, 3usize, 5usize, 10usize);
    let agents: Vec<usize> = (0..na).collect();
    let obs = BoolMat::from_fn(na, ne, |r, e| r == e || rng.gen_bool(0.6));
    let params = AgentNetParams::init(d, 3, 16, 2, 8, &mut rng);

    let m = PartitionVector::new(vec![true; ne]);
    let (mi, mo) = build_group_masks(&m, &agents).unwrap();
    let (obs_in, obs_out) = apply_observability(&mi, &mo, &obs).unwrap();
    assert_eq!(obs_in, obs);

    let mut hidden = StreamHidden::zeros(na, 8);
    for t in 0..steps {
        let x = Tensor::rand_uniform(&[ne, d], -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let mut b = Binder::new(&mut g);
        let lv = params.bind(&mut b);
        let xn = g.constant(x);
        let streams = StreamNodes {
            full: g.constant(hidden.full.clone()),
            in_group: g.constant(hidden.in_group.clone()),
            out_group: g.constant(hidden.out_group.clone()),
        };
        let masks = TripleMasks {
            full: &obs,
            in_group: &obs_in,
            out_group: &obs_out,
        };
        let (q, h) = agent::triple_pass(
            &mut g,
            &lv,
            xn,
            AttnLayout::single(ne),
            &agents,
            masks,
            streams,
        )
        .unwrap();
        let qf = g.value(q.full).data();
        let qi = g.value(q.in_group).data();
        assert!(
            qf.iter().zip(qi).all(|(a, b)| a.to_bits() == b.to_bits()),
            "step {t}: in-group pass diverged from the full pass"
        );
        hidden = StreamHidden {
            full: g.value(h.full).clone(),
            in_group: g.value(h.in_group).clone(),
            out_group: g.value(h.out_group).clone(),
        };
    }
    pass(5, "all-ones partition reproduces the full pass bit-exactly");
}

struct StreamHidden {
    full: Tensor,
    in_group: Tensor,
    out_group: Tensor,
}

impl StreamHidden {
    fn zeros(na: usize, dim: usize) -> Self {
        StreamHidden {
            full: Tensor::zeros(&[na, dim]),
            in_group: Tensor::zeros(&[na, dim]),
            out_group: Tensor::zeros(&[na, dim]),
        }
    }
}

// ---------------------------------------------------------------------------
// criterion 6: lambda = 0 equivalence

#[test]
fn criterion_6_lambda_zero_equivalence() {
    // enough environment steps for at least 100 training rounds
    let base = RunConfig {
        seed: 6,
        total_steps: 9_000,
        eval_interval: 1_000_000, // no mid-run evaluation
        eval_episodes: 1,
        n_envs: 8,
        trains_per_round: 1,
        env: EnvConfig {
            n_agents: 2,
            n_cells: 3,
            n_groups: 2,
            step_limit: 10,
        },
        learner: LearnerConfig {
            batch_size: 16,
            buffer_capacity: 500,
            anneal_steps: 5_000,
            lambda: 0.0, // forced to zero for the refil arm
            ..LearnerConfig::default()
        },
        net: NetConfig {
            attn_dim: 16,
            attn_heads: 2,
            rnn_dim: 8,
            mix_dim: 8,
        },
        partition: Default::default(),
        ..RunConfig::default()
    };

    let mut refil_cfg = base.clone();
    refil_cfg.algorithm = Algorithm::Refil;
    let mut qmix_cfg = base.clone();
    qmix_cfg.algorithm = Algorithm::QmixAttention;
    qmix_cfg.learner.lambda = 0.5; // ignored: the algorithm forces zero

    let d1 = temp_dir("lambda0-refil");
    let d2 = temp_dir("lambda0-qmix");
    let r1 = run_train(&refil_cfg, &d1).unwrap();
    let r2 = run_train(&qmix_cfg, &d2).unwrap();
    assert!(
        r1.train_steps >= 100,
        "calibrate total_steps: only {} training steps",
        r1.train_steps
    );
    assert_eq!(r1.train_steps, r2.train_steps);

    let c1 = std::fs::read(d1.join(CHECKPOINT_FILE)).unwrap();
    let c2 = std::fs::read(d2.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(c1, c2, "parameters diverged between refil(lambda=0) and qmix-attention");
    pass(
        6,
        &format!(
            "bit-identical parameters after {} seeded training steps",
            r1.train_steps
        ),
    );
}

// ---------------------------------------------------------------------------
// criterion 9: partition sampler statistics

#[test]
fn criterion_9_partition_size_marginal() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 8;
    let draws = 100_000;
    let mut counts = vec![0usize; n + 1];
    for _ in 0..draws {
        counts[sample_partition(n, &mut rng).count_ones()] += 1;
    }
    let expect = 1.0 / (n as f64 + 1.0);
    let mut worst: f64 = 0.0;
    for (k, &c) in counts.iter().enumerate() {
        let freq = c as f64 / draws as f64;
        let dev = (freq - expect).abs();
        assert!(dev < 0.01, "group size {k}: frequency {freq}");
        worst = worst.max(dev);
    }
    pass(
        9,
        &format!("sizes 0..={n} uniform within {worst:.4} of {expect:.4} over {draws} draws"),
    );
}

// ---------------------------------------------------------------------------
// criteria 7 and 8: learning runs (hours of wall time; run with --ignored)

fn desk_run_config(algorithm: Algorithm, seed: u64) -> RunConfig {
    RunConfig {
        algorithm,
        seed,
        total_steps: 500_000,
        eval_interval: 10_000,
        eval_episodes: 64,
        n_envs: 8,
        trains_per_round: 1,
        env: EnvConfig {
            n_agents: 4,
            n_cells: 4,
            n_groups: 2,
            step_limit: 50,
        },
        learner: LearnerConfig::default(),
        net: NetConfig {
            attn_dim: 64,
            attn_heads: 4,
            rnn_dim: 32,
            mix_dim: 32,
        },
        partition: Default::default(),
    }
}

#[test]
#[ignore = "multi-hour learning run; execute with --ignored --nocapture"]
fn criterion_7_desk_scale_learning() {
    let mut results = Vec::new();
    for algorithm in [Algorithm::Refil, Algorithm::QmixAttention] {
        let mut successes = 0;
        for seed in 1..=4u64 {
            let cfg = desk_run_config(algorithm, seed);
            let dir = temp_dir(&format!("c7-{algorithm}-s{seed}"));
            let start = Instant::now();
            run_train(&cfg, &dir).unwrap();
            let (header, rows) = read_metrics(&dir.join(METRICS_FILE)).unwrap();
            let win_col = header.iter().position(|c| c == "eval_win_rate").unwrap();
            let best = rows.iter().map(|r| r[win_col]).fold(0.0f64, f64::max);
            let reached = best >= 0.90;
            successes += reached as usize;
            println!(
                "  {algorithm} seed {seed}: best eval win rate {best:.3} \
                 ({}) in {:?}",
                if reached { "reached 0.90" } else { "below 0.90" },
                start.elapsed()
            );
        }
        results.push((algorithm, successes));
        assert!(
            successes >= 3,
            "{algorithm}: only {successes}/4 seeds reached 90% within 500k steps"
        );
    }
    pass(
        7,
        &format!(
            "{} and {} reached >= 90% eval win rate on >= 3 of 4 seeds",
            results[0].0, results[1].0
        ),
    );
}

#[test]
#[ignore = "many multi-hour learning runs; execute with --ignored --nocapture"]
fn criterion_8_directional_ordering() {
    // area under the learning curve, trapezoidal over env steps
    fn aulc(dir: &Path) -> f64 {
        let (header, rows) = read_metrics(&dir.join(METRICS_FILE)).unwrap();
        let sc = header.iter().position(|c| c == "env_steps").unwrap();
        let wc = header.iter().position(|c| c == "eval_win_rate").unwrap();
        let mut area = 0.0;
        for w in rows.windows(2) {
            area += 0.5 * (w[0][wc] + w[1][wc]) * (w[1][sc] - w[0][sc]);
        }
        area / (rows.last().unwrap()[sc] - rows[0][sc]).max(1.0)
    }

    let methods = [
        Algorithm::Refil,
        Algorithm::RefilFixedOracle,
        Algorithm::QmixAttention,
    ];
    let seeds: Vec<u64> = (1..=8).collect();
    let mut means = Vec::new();
    for method in methods {
        let mut scores = Vec::new();
        for &seed in &seeds {
            let mut cfg = desk_run_config(method, seed);
            cfg.env = EnvConfig {
                n_agents: 8,
                n_cells: 6,
                n_groups: 2,
                step_limit: 50,
            };
            let dir = temp_dir(&format!("c8-{method}-s{seed}"));
            run_train(&cfg, &dir).unwrap();
            let score = aulc(&dir);
            println!("  {method} seed {seed}: AULC {score:.4}");
            scores.push(score);
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        println!("  {method}: mean AULC {mean:.4}");
        means.push((method, mean));
    }
    let refil = means[0].1;
    let fixed = means[1].1;
    let qmix = means[2].1;
    assert!(
        refil >= fixed,
        "expected refil ({refil:.4}) >= fixed oracle ({fixed:.4}) at the mean"
    );
    assert!(
        refil >= qmix,
        "expected refil ({refil:.4}) >= qmix-attention ({qmix:.4}) at the mean"
    );
    pass(
        8,
        &format!("mean AULC: refil {refil:.4} >= fixed-oracle {fixed:.4}, qmix {qmix:.4}"),
    );
}
