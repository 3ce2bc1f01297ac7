//! Run configuration: algorithm selection plus environment, learner, and
//! network hyperparameters. Serialized as TOML; every field has a default so
//! partial config files work, and the resolved config is written verbatim
//! into the run directory for reproducibility.

use crate::env::EnvConfig;
use crate::error::HarnessError;
use crate::learner::LearnerConfig;
use crate::mixing::MixerKind;
use crate::params::NetConfig;
use crate::partition::PartitionStrategy;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// The trainable method variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Attention QMIX plus the randomized-factorization auxiliary loss.
    Refil,
    /// Attention QMIX alone (auxiliary weight forced to zero).
    QmixAttention,
    /// Auxiliary loss with summation mixing.
    RefilVdn,
    /// Summation mixing alone.
    VdnAttention,
    /// Auxiliary loss with ground-truth group masks.
    RefilFixedOracle,
    /// Auxiliary loss with random sub-groups drawn within true groups.
    RefilRandomizedOracle,
}

pub const ALGORITHMS: [Algorithm; 6] = [
    Algorithm::Refil,
    Algorithm::QmixAttention,
    Algorithm::RefilVdn,
    Algorithm::VdnAttention,
    Algorithm::RefilFixedOracle,
    Algorithm::RefilRandomizedOracle,
];

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Refil => "refil",
            Algorithm::QmixAttention => "qmix-attention",
            Algorithm::RefilVdn => "refil-vdn",
            Algorithm::VdnAttention => "vdn-attention",
            Algorithm::RefilFixedOracle => "refil-fixed-oracle",
            Algorithm::RefilRandomizedOracle => "refil-randomized-oracle",
        }
    }

    pub fn mixer(&self) -> MixerKind {
        match self {
            Algorithm::RefilVdn | Algorithm::VdnAttention => MixerKind::Vdn,
            _ => MixerKind::Qmix,
        }
    }

    /// Auxiliary-loss weight actually used: zero for the plain variants,
    /// the configured value otherwise.
    pub fn effective_lambda(&self, configured: f64) -> f64 {
        match self {
            Algorithm::QmixAttention | Algorithm::VdnAttention => 0.0,
            _ => configured,
        }
    }

    fn partition_strategy(&self, random_groups: usize) -> PartitionStrategy {
        match self {
            Algorithm::RefilFixedOracle => PartitionStrategy::FixedOracle,
            Algorithm::RefilRandomizedOracle => PartitionStrategy::RandomizedOracle,
            _ => PartitionStrategy::Random {
                groups: random_groups,
            },
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ALGORITHMS
            .iter()
            .copied()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = ALGORITHMS.iter().map(|a| a.as_str()).collect();
                HarnessError::Invalid(format!(
                    "unknown algorithm '{s}'; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// Imagined-partition settings for the random strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    /// Number of random sub-groups.
    pub groups: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig { groups: 2 }
    }
}

/// Full configuration of a training or evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub seed: u64,
    /// Total environment steps to train for.
    pub total_steps: u64,
    /// Greedy evaluation every this many environment steps.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Parallel data-collection environments per round.
    pub n_envs: usize,
    /// Training steps per collection round.
    pub trains_per_round: usize,
    pub env: EnvConfig,
    pub learner: LearnerConfig,
    pub net: NetConfig,
    pub partition: PartitionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            algorithm: Algorithm::Refil,
            seed: 1,
            total_steps: 500_000,
            eval_interval: 10_000,
            eval_episodes: 32,
            n_envs: 8,
            trains_per_round: 1,
            env: EnvConfig::default(),
            learner: LearnerConfig::default(),
            net: NetConfig::default(),
            partition: PartitionConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.env.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.learner.validate().map_err(HarnessError::Config)?;
        if self.n_envs == 0 {
            return Err(HarnessError::Config("n_envs must be positive".into()));
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return Err(HarnessError::Config(
                "eval interval and episode count must be positive".into(),
            ));
        }
        if self.partition.groups < 2 {
            return Err(HarnessError::Config(
                "partition groups must be at least 2".into(),
            ));
        }
        Ok(())
    }

    pub fn mixer(&self) -> MixerKind {
        self.algorithm.mixer()
    }

    pub fn effective_lambda(&self) -> f64 {
        self.algorithm.effective_lambda(self.learner.lambda)
    }

    /// Partition strategy for batch assembly; `None` when the auxiliary loss
    /// is off, so no partition randomness is ever consumed.
    pub fn strategy(&self) -> Option<PartitionStrategy> {
        if self.effective_lambda() == 0.0 {
            None
        } else {
            Some(self.algorithm.partition_strategy(self.partition.groups))
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        let cfg: RunConfig =
            toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, HarnessError> {
        let s = std::fs::read_to_string(path)?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
