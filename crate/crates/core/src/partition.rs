//! Random entity partitions and the in-group/out-group mask algebra.
//!
//! A partition assigns every entity to one of two (or, with the multi-group
//! extension, `k`) imagined groups, held fixed for an episode. From the
//! partition we derive agent-by-entity attention masks: `in_group[a, e] = 1`
//! iff agent `a` and entity `e` share a group, and `out_group` is its
//! elementwise negation. Combined with the environment's observability mask
//! they drive the imagined utility passes.
//!
//! Two-group sampling first draws `p` uniformly from (0, 1) and then gives
//! each entity an independent Bernoulli(p) group bit. Marginally over `p`
//! this makes the group *size* uniform on `0..=n` (a Beta-Binomial with unit
//! shape parameters), not the 2^n vectors individually.

use crate::tensor::BoolMat;
use rand::Rng;
use std::fmt;

/// Per-entity binary group assignment, fixed for an episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionVector(Vec<bool>);

impl PartitionVector {
    pub fn new(bits: Vec<bool>) -> Self {
        PartitionVector(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, e: usize) -> bool {
        self.0[e]
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn complement(&self) -> PartitionVector {
        PartitionVector(self.0.iter().map(|&b| !b).collect())
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// Errors from mask construction.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskError {
    AgentIndexOutOfRange { index: usize, entities: usize },
    ShapeMismatch { detail: String },
}

impl fmt::Display for MaskError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskError::AgentIndexOutOfRange { index, entities } => {
                write!(f, "agent index {index} out of range for {entities} entities")
            }
            MaskError::ShapeMismatch { detail } => write!(f, "mask shape mismatch: {detail}"),
        }
    }
}

impl std::error::Error for MaskError {}

/// Draw `p ~ Uniform(0,1)` once, then give each entity an independent
/// Bernoulli(p) bit.
pub fn sample_partition<R: Rng>(n_entities: usize, rng: &mut R) -> PartitionVector {
    debug_assert!(n_entities >= 1);
    let p = rng.gen::<f64>();
    partition_with_prob(n_entities, p, rng)
}

/// Bernoulli(p) bits for each entity; exposed so the degenerate endpoints
/// (p = 0, p = 1) are directly testable.
pub fn partition_with_prob<R: Rng>(n_entities: usize, p: f64, rng: &mut R) -> PartitionVector {
    PartitionVector((0..n_entities).map(|_| rng.gen::<f64>() < p).collect())
}

/// Group co-membership masks from a two-group partition:
/// `in_group[a, e] = (m_a & m_e) | (!m_a & !m_e)`, `out_group = !in_group`.
/// Rows follow `agent_indices` order; columns are entities.
pub fn build_group_masks(
    m: &PartitionVector,
    agent_indices: &[usize],
) -> Result<(BoolMat, BoolMat), MaskError> {
    let ne = m.len();
    for &a in agent_indices {
        if a >= ne {
            return Err(MaskError::AgentIndexOutOfRange {
                index: a,
                entities: ne,
            });
        }
    }
    let in_group = BoolMat::from_fn(agent_indices.len(), ne, |r, e| {
        let ma = m.get(agent_indices[r]);
        let me = m.get(e);
        (ma && me) || (!ma && !me)
    });
    let out_group = in_group.not();
    Ok((in_group, out_group))
}

/// Intersect partition masks with the observability mask, elementwise.
pub fn apply_observability(
    in_group: &BoolMat,
    out_group: &BoolMat,
    obs: &BoolMat,
) -> Result<(BoolMat, BoolMat), MaskError> {
    let same = |m: &BoolMat| m.rows() == obs.rows() && m.cols() == obs.cols();
    if !same(in_group) || !same(out_group) {
        return Err(MaskError::ShapeMismatch {
            detail: format!(
                "in {}x{}, out {}x{}, obs {}x{}",
                in_group.rows(),
                in_group.cols(),
                out_group.rows(),
                out_group.cols(),
                obs.rows(),
                obs.cols()
            ),
        });
    }
    Ok((in_group.and(obs), out_group.and(obs)))
}

/// Partition masks for one episode: group co-membership masks and their
/// observability-restricted counterparts.
#[derive(Debug, Clone)]
pub struct PartitionMasks {
    pub in_group: BoolMat,
    pub out_group: BoolMat,
    pub obs_in: BoolMat,
    pub obs_out: BoolMat,
}

impl PartitionMasks {
    pub fn build(in_group: BoolMat, out_group: BoolMat, obs: &BoolMat) -> Result<Self, MaskError> {
        let (obs_in, obs_out) = apply_observability(&in_group, &out_group, obs)?;
        Ok(PartitionMasks {
            in_group,
            out_group,
            obs_in,
            obs_out,
        })
    }
}

/// Split entities into `k` disjoint random sub-groups covering all entities.
/// Group weights come from the uniform simplex (sorted-uniform spacings), so
/// `k = 2` reduces exactly to [`sample_partition`] semantics.
pub fn sample_multi_partition<R: Rng>(
    n_entities: usize,
    k_groups: usize,
    rng: &mut R,
) -> Vec<PartitionVector> {
    debug_assert!(k_groups >= 2);
    let mut cuts: Vec<f64> = (0..k_groups - 1).map(|_| rng.gen::<f64>()).collect();
    cuts.sort_by(f64::total_cmp);
    let mut assignment = vec![0usize; n_entities];
    for slot in assignment.iter_mut() {
        let u = rng.gen::<f64>();
        *slot = cuts.partition_point(|&c| c <= u);
    }
    (0..k_groups)
        .map(|gidx| PartitionVector(assignment.iter().map(|&a| a == gidx).collect()))
        .collect()
}

/// Co-membership masks for a multi-group partition: in-group pairs share a
/// sub-group, out-group is the complement.
pub fn build_multi_group_masks(
    parts: &[PartitionVector],
    agent_indices: &[usize],
) -> Result<(BoolMat, BoolMat), MaskError> {
    assert!(!parts.is_empty());
    let ne = parts[0].len();
    for &a in agent_indices {
        if a >= ne {
            return Err(MaskError::AgentIndexOutOfRange {
                index: a,
                entities: ne,
            });
        }
    }
    // exactly one group bit per entity by construction of the sampler
    let gid = |e: usize| parts.iter().position(|p| p.get(e)).expect("disjoint cover");
    let in_group = BoolMat::from_fn(agent_indices.len(), ne, |r, e| {
        gid(agent_indices[r]) == gid(e)
    });
    let out_group = in_group.not();
    Ok((in_group, out_group))
}

/// Which partition source drives the imagined factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionStrategy {
    /// Fresh random partition into `groups` disjoint sub-groups per episode
    /// draw.
    Random { groups: usize },
    /// Ground-truth co-membership (ablation).
    FixedOracle,
    /// Random sub-partition within each true group (ablation).
    RandomizedOracle,
}

impl PartitionStrategy {
    /// Sample the in-group/out-group masks for one episode draw.
    pub fn sample_masks<R: Rng>(
        &self,
        n_entities: usize,
        agent_indices: &[usize],
        ground_truth: &[usize],
        rng: &mut R,
    ) -> Result<(BoolMat, BoolMat), MaskError> {
        match *self {
            PartitionStrategy::Random { groups } if groups <= 2 => {
                let m = sample_partition(n_entities, rng);
                build_group_masks(&m, agent_indices)
            }
            PartitionStrategy::Random { groups } => {
                let parts = sample_multi_partition(n_entities, groups, rng);
                build_multi_group_masks(&parts, agent_indices)
            }
            PartitionStrategy::FixedOracle => {
                oracle_masks(ground_truth, agent_indices, OracleMode::Fixed, rng)
            }
            PartitionStrategy::RandomizedOracle => {
                oracle_masks(ground_truth, agent_indices, OracleMode::Randomized, rng)
            }
        }
    }
}

/// How oracle masks use the environment's ground-truth group structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    /// In-group relation is exactly ground-truth co-membership.
    Fixed,
    /// Each true group is independently split by [`sample_partition`]
    /// restricted to its members; entities from different true groups are
    /// never merged.
    Randomized,
}

/// Masks derived from ground-truth group assignments (ablation strategies).
pub fn oracle_masks<R: Rng>(
    ground_truth: &[usize],
    agent_indices: &[usize],
    mode: OracleMode,
    rng: &mut R,
) -> Result<(BoolMat, BoolMat), MaskError> {
    let ne = ground_truth.len();
    for &a in agent_indices {
        if a >= ne {
            return Err(MaskError::AgentIndexOutOfRange {
                index: a,
                entities: ne,
            });
        }
    }
    let labels: Vec<(usize, bool)> = match mode {
        OracleMode::Fixed => ground_truth.iter().map(|&gt| (gt, false)).collect(),
        OracleMode::Randomized => {
            let max_group = ground_truth.iter().copied().max().unwrap_or(0);
            let mut sub = vec![false; ne];
            for gidx in 0..=max_group {
                let members: Vec<usize> = (0..ne).filter(|&e| ground_truth[e] == gidx).collect();
                if members.is_empty() {
                    continue;
                }
                let bits = sample_partition(members.len(), rng);
                for (i, &e) in members.iter().enumerate() {
                    sub[e] = bits.get(i);
                }
            }
            ground_truth
                .iter()
                .zip(&sub)
                .map(|(&gt, &s)| (gt, s))
                .collect()
        }
    };
    let in_group = BoolMat::from_fn(agent_indices.len(), ne, |r, e| {
        labels[agent_indices[r]] == labels[e]
    });
    let out_group = in_group.not();
    Ok((in_group, out_group))
}
