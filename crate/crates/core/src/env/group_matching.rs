//! The group matching game.
//!
//! Agents live on a ring of `n_cells` cells. At the start of each episode
//! every agent is placed in a uniformly random cell and assigned to one of
//! `n_groups` groups; the assignment is fixed for the episode and each
//! unique assignment is effectively a distinct task. Per step each agent
//! moves clockwise, stays, or moves counter-clockwise. All agents share a
//! reward of 2.5 whenever a group becomes complete (all members in one
//! cell), an equal penalty when a formed group breaks, and a -0.1 time
//! penalty per step. The episode ends when every group is simultaneously
//! complete (a win) or when the step limit is reached. The task is fully
//! observable and there is no restriction on which cell a group forms in.

use super::{EnvError, Environment, StateMatrix, StepInfo, StepOutcome};
use crate::tensor::{BoolMat, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Move clockwise, stay, move counter-clockwise.
pub const N_ACTIONS: usize = 3;

pub const ACTION_CLOCKWISE: usize = 0;
pub const ACTION_STAY: usize = 1;
pub const ACTION_COUNTER_CLOCKWISE: usize = 2;

const STEP_PENALTY: f64 = -0.1;
const GROUP_REWARD: f64 = 2.5;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub n_agents: usize,
    pub n_cells: usize,
    pub n_groups: usize,
    pub step_limit: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            n_agents: 8,
            n_cells: 6,
            n_groups: 2,
            step_limit: 50,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.n_groups < 1 || self.n_agents < self.n_groups {
            return Err(EnvError::InvalidConfig(format!(
                "need n_agents >= n_groups >= 1, got {} agents, {} groups",
                self.n_agents, self.n_groups
            )));
        }
        if self.n_cells < 2 {
            return Err(EnvError::InvalidConfig(format!(
                "need at least 2 cells, got {}",
                self.n_cells
            )));
        }
        if self.step_limit < 1 {
            return Err(EnvError::InvalidConfig("step limit must be >= 1".into()));
        }
        Ok(())
    }

    /// One-hot cell plus one-hot group.
    pub fn feature_dim(&self) -> usize {
        self.n_cells + self.n_groups
    }
}

pub struct GroupMatchingEnv {
    cfg: EnvConfig,
    rng: ChaCha8Rng,
    cells: Vec<usize>,
    groups: Vec<usize>,
    /// Completion status per group after the most recent resolution.
    complete: Vec<bool>,
    steps: usize,
}

impl GroupMatchingEnv {
    pub fn new(cfg: EnvConfig, rng: ChaCha8Rng) -> Result<Self, EnvError> {
        cfg.validate()?;
        let n = cfg.n_agents;
        Ok(GroupMatchingEnv {
            cells: vec![0; n],
            groups: vec![0; n],
            complete: vec![false; cfg.n_groups],
            steps: 0,
            cfg,
            rng,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn step_count(&self) -> usize {
        self.steps
    }

    /// Force a specific configuration (diagnostics and tests). Recomputes
    /// group completion status; the step counter is reset.
    pub fn force_state(&mut self, cells: &[usize], groups: &[usize]) {
        assert_eq!(cells.len(), self.cfg.n_agents);
        assert_eq!(groups.len(), self.cfg.n_agents);
        assert!(cells.iter().all(|&c| c < self.cfg.n_cells));
        assert!(groups.iter().all(|&g| g < self.cfg.n_groups));
        self.cells = cells.to_vec();
        self.groups = groups.to_vec();
        self.steps = 0;
        self.refresh_completion();
    }

    fn refresh_completion(&mut self) {
        for g in 0..self.cfg.n_groups {
            self.complete[g] = self.group_complete(g);
        }
    }

    /// A group is complete when all its members share one cell. An empty
    /// group is vacuously complete.
    fn group_complete(&self, group: usize) -> bool {
        let mut cell = None;
        for a in 0..self.cfg.n_agents {
            if self.groups[a] == group {
                match cell {
                    None => cell = Some(self.cells[a]),
                    Some(c) if c != self.cells[a] => return false,
                    _ => {}
                }
            }
        }
        true
    }

    fn state_matrix(&self) -> StateMatrix {
        let n = self.cfg.n_agents;
        let d = self.cfg.feature_dim();
        let mut features = Tensor::zeros(&[n, d]);
        for a in 0..n {
            features.set2(a, self.cells[a], 1.0);
            features.set2(a, self.cfg.n_cells + self.groups[a], 1.0);
        }
        StateMatrix {
            features,
            agent_indices: (0..n).collect(),
            obs_mask: BoolMat::ones(n, n), // fully observable
            active: vec![true; n],
        }
    }

    fn avail(&self) -> BoolMat {
        BoolMat::ones(self.cfg.n_agents, N_ACTIONS)
    }
}

impl Environment for GroupMatchingEnv {
    fn n_agents(&self) -> usize {
        self.cfg.n_agents
    }

    fn n_entities(&self) -> usize {
        self.cfg.n_agents
    }

    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn feature_dim(&self) -> usize {
        self.cfg.feature_dim()
    }

    fn reset(&mut self) -> (StateMatrix, BoolMat) {
        for a in 0..self.cfg.n_agents {
            self.cells[a] = self.rng.gen_range(0..self.cfg.n_cells);
            self.groups[a] = self.rng.gen_range(0..self.cfg.n_groups);
        }
        self.steps = 0;
        self.refresh_completion();
        (self.state_matrix(), self.avail())
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome, EnvError> {
        let n = self.cfg.n_agents;
        if actions.len() != n {
            return Err(EnvError::WrongActionCount {
                expected: n,
                got: actions.len(),
            });
        }
        for (agent, &action) in actions.iter().enumerate() {
            if action >= N_ACTIONS {
                return Err(EnvError::InvalidAction { agent, action });
            }
        }
        let nc = self.cfg.n_cells;
        for (agent, &action) in actions.iter().enumerate() {
            self.cells[agent] = match action {
                ACTION_CLOCKWISE => (self.cells[agent] + 1) % nc,
                ACTION_STAY => self.cells[agent],
                ACTION_COUNTER_CLOCKWISE => (self.cells[agent] + nc - 1) % nc,
                _ => unreachable!(),
            };
        }
        self.steps += 1;

        // completion events are evaluated after all simultaneous moves resolve
        let mut completed = 0;
        let mut broken = 0;
        for g in 0..self.cfg.n_groups {
            let now = self.group_complete(g);
            if now && !self.complete[g] {
                completed += 1;
            }
            if !now && self.complete[g] {
                broken += 1;
            }
            self.complete[g] = now;
        }
        let reward =
            STEP_PENALTY + GROUP_REWARD * completed as f64 - GROUP_REWARD * broken as f64;
        let all_complete = self.complete.iter().all(|&c| c);
        let terminated = all_complete || self.steps >= self.cfg.step_limit;

        Ok(StepOutcome {
            state: self.state_matrix(),
            avail: self.avail(),
            reward,
            terminated,
            info: StepInfo {
                win: all_complete,
                groups_completed: completed,
                groups_broken: broken,
            },
        })
    }

    fn ground_truth_groups(&self) -> Vec<usize> {
        self.groups.clone()
    }
}
