//! Multi-task cooperative multi-agent Q-learning with randomized
//! entity-wise value factorization.
//!
//! The crate implements attention-based QMIX over entity-structured states
//! and the REFIL auxiliary objective: per episode, entities are randomly
//! partitioned into groups, per-agent utilities are re-estimated under
//! in-group and out-group attention masks, and a second monotonic mixing
//! network reconstructs the team value from the doubled factor set. The
//! auxiliary loss is trained alongside the standard double-Q loss.
//!
//! Everything runs on a self-contained `f64` reverse-mode autodiff tape;
//! there is no external ML framework dependency. The `env` module ships the
//! group matching game used for end-to-end verification, and `runner` holds
//! the training/evaluation harness behind the CLI.

pub mod agent;
pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod episode;
pub mod error;
pub mod export;
pub mod graph;
pub mod learner;
pub mod metrics;
pub mod mixing;
pub mod numcheck;
pub mod params;
pub mod partition;
pub mod runner;
pub mod tensor;

pub use graph::{Graph, GraphError, NodeId};
pub use tensor::{BoolMat, Tensor};
