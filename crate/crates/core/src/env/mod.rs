//! Entity-based environment interface.
//!
//! The global state is a set of per-entity feature vectors stacked into a
//! matrix, together with the agent index list, an agent-by-entity
//! observability mask, and per-entity active flags. Every environment —
//! including any future adapter for richer simulators — exposes the same
//! `reset` / `step` contract over these types.

use crate::tensor::{BoolMat, Tensor};
use std::fmt;

pub mod group_matching;

pub use group_matching::{EnvConfig, GroupMatchingEnv, N_ACTIONS};

/// Stacked per-entity state: one feature row per entity.
#[derive(Debug, Clone)]
pub struct StateMatrix {
    /// `n_entities x feat_dim` feature rows (state features plus one-hot type).
    pub features: Tensor,
    /// Which entity rows are agents, in agent order.
    pub agent_indices: Vec<usize>,
    /// `n_agents x n_entities` observability mask; agents always observe
    /// themselves. Inactive entities have all-zero columns.
    pub obs_mask: BoolMat,
    /// Per-entity active flags; inactive entities have zeroed feature rows.
    pub active: Vec<bool>,
}

impl StateMatrix {
    pub fn n_entities(&self) -> usize {
        self.features.rows()
    }

    pub fn n_agents(&self) -> usize {
        self.agent_indices.len()
    }

    pub fn feat_dim(&self) -> usize {
        self.features.cols()
    }
}

/// Extra per-step information.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepInfo {
    /// Episode ended with the task solved (success termination).
    pub win: bool,
    pub groups_completed: usize,
    pub groups_broken: usize,
}

/// Result of advancing the environment by one joint action.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: StateMatrix,
    /// `n_agents x n_actions` availability mask.
    pub avail: BoolMat,
    pub reward: f64,
    pub terminated: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnvError {
    InvalidConfig(String),
    InvalidAction { agent: usize, action: usize },
    WrongActionCount { expected: usize, got: usize },
}

impl fmt::Display for EnvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvError::InvalidConfig(msg) => write!(f, "invalid environment config: {msg}"),
            EnvError::InvalidAction { agent, action } => {
                write!(f, "invalid action {action} for agent {agent}")
            }
            EnvError::WrongActionCount { expected, got } => {
                write!(f, "expected {expected} actions, got {got}")
            }
        }
    }
}

impl std::error::Error for EnvError {}

/// Contract every entity-based environment satisfies.
pub trait Environment {
    fn n_agents(&self) -> usize;
    fn n_entities(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn feature_dim(&self) -> usize;

    /// Start a new episode. Returns the initial state (with its
    /// observability mask) and per-agent action availability.
    fn reset(&mut self) -> (StateMatrix, BoolMat);

    /// Advance by one joint action (one action id per agent).
    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome, EnvError>;

    /// Episode-fixed ground-truth group id per entity. Only oracle partition
    /// strategies consume this.
    fn ground_truth_groups(&self) -> Vec<usize>;
}
