//! Seeded training and evaluation runs.
//!
//! Data collection uses `n_envs` environment instances advanced round-robin
//! in lockstep with the learner: each round collects one episode per
//! instance under the current exploration rate, then performs the configured
//! number of training steps. All randomness derives from the run seed
//! through separate named streams (initialization, per-environment dynamics,
//! exploration, partitions, replay sampling, evaluation), so a `(seed,
//! config)` pair fully determines the trajectory, and greedy evaluation
//! never perturbs training randomness.

use crate::agent;
use crate::attention::AttnLayout;
use crate::checkpoint;
use crate::config::RunConfig;
use crate::env::{Environment, GroupMatchingEnv};
use crate::episode::{Episode, ReplayBuffer};
use crate::error::HarnessError;
use crate::graph::{Binder, Graph};
use crate::learner::{self, assemble_batch, epsilon_at, LearnerConfig, RmsProp, TargetScheduler, TrainMetrics};
use crate::metrics::MetricsWriter;
pub use crate::metrics::METRICS_FILE;
use crate::numcheck::{ci95_mean, ci95_proportion, mean};
use crate::params::{NetParams, ParamSet};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_HEADER: [&str; 11] = [
    "env_steps",
    "episodes",
    "eval_win_rate",
    "eval_mean_return",
    "eval_mean_length",
    "loss",
    "loss_q",
    "loss_aux",
    "grad_norm",
    "epsilon",
    "buffer_episodes",
];

const STREAM_INIT: u64 = 1;
const STREAM_ACTIONS: u64 = 2;
const STREAM_PARTITIONS: u64 = 3;
const STREAM_REPLAY: u64 = 4;
const STREAM_ENV_BASE: u64 = 100;
const STREAM_EVAL_BASE: u64 = 10_000;

/// Evaluation-index offset used by standalone (post-training) evaluations so
/// they never reuse an in-training evaluation stream.
pub const EVAL_CLI_STREAM_OFFSET: u64 = 1_000_000;

/// Independent deterministic RNG stream derived from the run seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Summary of a batch of greedy evaluation episodes, with 95%
/// normal-approximation confidence half-widths.
#[derive(Debug, Clone, Copy)]
pub struct EvalSummary {
    pub episodes: usize,
    pub win_rate: f64,
    pub win_ci95: f64,
    pub mean_return: f64,
    pub return_ci95: f64,
    pub mean_length: f64,
    pub length_ci95: f64,
}

/// Outcome of a finished training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainReport {
    pub env_steps: u64,
    pub episodes: u64,
    pub train_steps: u64,
    pub final_eval: EvalSummary,
}

/// Roll out one episode with an epsilon-greedy policy over the utility
/// network (epsilon zero is exactly greedy and consumes no randomness).
pub fn collect_episode(
    env: &mut GroupMatchingEnv,
    net: &NetParams,
    epsilon: f64,
    action_rng: &mut ChaCha8Rng,
) -> Episode {
    let (state, avail) = env.reset();
    let ground_truth = env.ground_truth_groups();
    let n_agents = env.n_agents();
    let rnn_dim = net.agent.rnn_dim();
    let layout = AttnLayout::single(env.n_entities());
    let agent_indices = state.agent_indices.clone();

    let mut g = Graph::new();
    let mut binder = Binder::new(&mut g);
    let lv = net.agent.bind(&mut binder);
    let mut hidden = g.constant(Tensor::zeros(&[n_agents, rnn_dim]));

    let mut ep = Episode {
        states: vec![state],
        avail: vec![avail],
        actions: Vec::new(),
        rewards: Vec::new(),
        terminated: Vec::new(),
        ground_truth,
        won: false,
    };
    loop {
        let (features, obs_mask) = {
            let s = ep.states.last().unwrap();
            (s.features.clone(), s.obs_mask.clone())
        };
        let x = g.constant(features);
        let (q, h) = agent::utilities(&mut g, &lv, x, layout, &agent_indices, &obs_mask, hidden)
            .expect("rollout forward pass");
        hidden = h;
        let actions =
            agent::epsilon_greedy(g.value(q), ep.avail.last().unwrap(), epsilon, action_rng)
                .expect("environment always offers an action");
        let out = env.step(&actions).expect("selected actions are valid");
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

/// Greedy evaluation on a fresh environment stream. `eval_index`
/// distinguishes successive evaluations within one run.
pub fn run_eval(
    net: &NetParams,
    cfg: &RunConfig,
    episodes: usize,
    eval_index: u64,
) -> Result<EvalSummary, HarnessError> {
    if episodes == 0 {
        return Err(HarnessError::Invalid(
            "evaluation requires at least one episode".into(),
        ));
    }
    let mut env = GroupMatchingEnv::new(
        cfg.env.clone(),
        stream_rng(cfg.seed, STREAM_EVAL_BASE + eval_index),
    )
    .map_err(|e| HarnessError::Config(e.to_string()))?;
    // greedy evaluation draws nothing from this stream
    let mut unused_rng = stream_rng(cfg.seed, STREAM_EVAL_BASE + eval_index);

    let mut wins = 0usize;
    let mut returns = Vec::with_capacity(episodes);
    let mut lengths = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let ep = collect_episode(&mut env, net, 0.0, &mut unused_rng);
        wins += ep.won as usize;
        returns.push(ep.total_reward());
        lengths.push(ep.len() as f64);
    }
    let win_rate = wins as f64 / episodes as f64;
    Ok(EvalSummary {
        episodes,
        win_rate,
        win_ci95: ci95_proportion(win_rate, episodes),
        mean_return: mean(&returns),
        return_ci95: ci95_mean(&returns),
        mean_length: mean(&lengths),
        length_ci95: ci95_mean(&lengths),
    })
}

fn average_metrics(acc: &[TrainMetrics]) -> TrainMetrics {
    if acc.is_empty() {
        return TrainMetrics::default();
    }
    let n = acc.len() as f64;
    TrainMetrics {
        loss: acc.iter().map(|m| m.loss).sum::<f64>() / n,
        loss_q: acc.iter().map(|m| m.loss_q).sum::<f64>() / n,
        loss_aux: acc.iter().map(|m| m.loss_aux).sum::<f64>() / n,
        grad_norm: acc.iter().map(|m| m.grad_norm).sum::<f64>() / n,
    }
}

/// Train until `total_steps` environment steps, evaluating greedily every
/// `eval_interval` steps and writing one metrics row per evaluation. The
/// resolved config, the metrics table, and a final parameter checkpoint land
/// in `out_dir`.
pub fn run_train(cfg: &RunConfig, out_dir: &Path) -> Result<TrainReport, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(CONFIG_FILE), cfg.to_toml_string())?;

    let feat_dim = cfg.env.feature_dim();
    let n_actions = crate::env::N_ACTIONS;
    let mut init_rng = stream_rng(cfg.seed, STREAM_INIT);
    let mut params = ParamSet::new(NetParams::init(
        feat_dim,
        n_actions,
        &cfg.net,
        cfg.mixer(),
        &mut init_rng,
    ));

    let mut envs = Vec::with_capacity(cfg.n_envs);
    for i in 0..cfg.n_envs {
        envs.push(
            GroupMatchingEnv::new(cfg.env.clone(), stream_rng(cfg.seed, STREAM_ENV_BASE + i as u64))
                .map_err(|e| HarnessError::Config(e.to_string()))?,
        );
    }
    let mut action_rng = stream_rng(cfg.seed, STREAM_ACTIONS);
    let mut partition_rng = stream_rng(cfg.seed, STREAM_PARTITIONS);
    let mut replay_rng = stream_rng(cfg.seed, STREAM_REPLAY);

    let mut buffer = ReplayBuffer::new(cfg.learner.buffer_capacity);
    let mut opt = RmsProp::new(cfg.learner.rmsprop_alpha, cfg.learner.rmsprop_eps);
    let mut scheduler = TargetScheduler::new(cfg.learner.target_interval);
    let mut writer = MetricsWriter::create(&out_dir.join(METRICS_FILE), &METRICS_HEADER)?;

    let strategy = cfg.strategy();
    let learner_cfg = LearnerConfig {
        lambda: cfg.effective_lambda(),
        ..cfg.learner.clone()
    };

    let mut env_steps: u64 = 0;
    let mut episodes: u64 = 0;
    let mut train_steps: u64 = 0;
    let mut eval_index: u64 = 0;
    let mut next_eval: u64 = 0;
    let mut metric_acc: Vec<TrainMetrics> = Vec::new();

    loop {
        while env_steps >= next_eval {
            let summary = run_eval(&params.live, cfg, cfg.eval_episodes, eval_index)?;
            let m = average_metrics(&metric_acc);
            // rows are keyed by the nominal evaluation boundary so runs with
            // different seeds stay aligned for cross-seed aggregation
            writer.write_row(&[
                next_eval as f64,
                episodes as f64,
                summary.win_rate,
                summary.mean_return,
                summary.mean_length,
                m.loss,
                m.loss_q,
                m.loss_aux,
                m.grad_norm,
                epsilon_at(&learner_cfg, env_steps),
                buffer.len() as f64,
            ])?;
            metric_acc.clear();
            eval_index += 1;
            next_eval += cfg.eval_interval;
        }
        if env_steps >= cfg.total_steps {
            break;
        }

        // one collection round: an episode from every environment instance
        let eps = epsilon_at(&learner_cfg, env_steps);
        for env in envs.iter_mut() {
            let ep = collect_episode(env, &params.live, eps, &mut action_rng);
            env_steps += ep.len() as u64;
            episodes += 1;
            buffer.push(ep);
        }

        if buffer.len() >= cfg.learner.batch_size {
            for _ in 0..cfg.trains_per_round.max(1) {
                let sampled = buffer.sample(cfg.learner.batch_size, &mut replay_rng);
                let batch = assemble_batch(&sampled, strategy.as_ref(), &mut partition_rng);
                let m = learner::train_step(&mut params, &mut opt, &batch, &learner_cfg, cfg.mixer())
                    .map_err(|e| HarnessError::Invalid(e.to_string()))?;
                metric_acc.push(m);
                train_steps += 1;
            }
            scheduler.maybe_sync(episodes, &mut params);
        }
    }

    checkpoint::save(&out_dir.join(CHECKPOINT_FILE), &params.live)?;
    let final_eval = run_eval(&params.live, cfg, cfg.eval_episodes, eval_index)?;
    Ok(TrainReport {
        env_steps,
        episodes,
        train_steps,
        final_eval,
    })
}

/// Rebuild the parameter set described by a run config and load a checkpoint
/// into it.
pub fn load_checkpointed_params(
    cfg: &RunConfig,
    checkpoint_path: &Path,
) -> Result<NetParams, HarnessError> {
    let mut init_rng = stream_rng(cfg.seed, STREAM_INIT);
    let mut net = NetParams::init(
        cfg.env.feature_dim(),
        crate::env::N_ACTIONS,
        &cfg.net,
        cfg.mixer(),
        &mut init_rng,
    );
    checkpoint::load_into(checkpoint_path, &mut net)?;
    Ok(net)
}
