//! Episode records and the replay buffer.

use crate::env::StateMatrix;
use crate::tensor::BoolMat;
use rand::Rng;
use std::collections::VecDeque;

/// One stored episode. For `T` environment steps there are `T + 1` states
/// and availability masks (including the post-terminal state used for
/// bootstrapping) and `T` actions, rewards, and termination flags.
#[derive(Debug, Clone)]
pub struct Episode {
    pub states: Vec<StateMatrix>,
    pub avail: Vec<BoolMat>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
    pub terminated: Vec<bool>,
    /// Episode-fixed ground-truth group per entity (oracle strategies).
    pub ground_truth: Vec<usize>,
    /// Episode ended by solving the task.
    pub won: bool,
}

impl Episode {
    /// Number of environment steps.
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn validate(&self) {
        assert_eq!(self.states.len(), self.len() + 1);
        assert_eq!(self.avail.len(), self.len() + 1);
        assert_eq!(self.actions.len(), self.len());
        assert_eq!(self.terminated.len(), self.len());
        assert!(self.terminated[self.len() - 1], "episode must end terminated");
    }
}

/// FIFO replay buffer over whole episodes with uniform sampling (with
/// replacement).
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    pub fn push(&mut self, episode: Episode) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &Episode {
        &self.episodes[i]
    }

    /// Uniform sample of `n` episodes, with replacement.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<&Episode> {
        assert!(!self.is_empty());
        (0..n)
            .map(|_| &self.episodes[rng.gen_range(0..self.episodes.len())])
            .collect()
    }
}
