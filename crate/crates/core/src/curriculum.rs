//! Retriever-side curriculum: stratified sampling of k reranked documents per
//! query with a rank span that shrinks stage by stage, and the rank-gap
//! statistics that measure how easy each stage is.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rerank::{partition_groups, GroupBounds, RerankError, RerankedList};
use crate::seeds;

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_N: usize = 20;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CurriculumError {
    #[error("stage {stage}: infeasible schedule: {reason}")]
    Infeasible { stage: usize, reason: String },
    #[error("reranked lists shorter than n={n} for queries: {}", query_ids.join(", "))]
    ShortLists { n: usize, query_ids: Vec<String> },
    #[error("rank-gap statistics need a non-empty set of instances from one stage")]
    EmptyOrMixed,
    #[error("instance for {query_id} violates its schedule: {reason}")]
    BadInstance { query_id: String, reason: String },
    #[error(transparent)]
    Rerank(#[from] RerankError),
}

/// Sampling recipe for one stage: `k1` documents from `[1, n1]`, `k2` from
/// `(n1, n2]`, `k3` from `(n2, n]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSchedule {
    pub stage: usize,
    pub n1: usize,
    pub n2: usize,
    pub k1: usize,
    pub k2: usize,
    pub k3: usize,
}

impl StageSchedule {
    pub fn k(&self) -> usize {
        self.k1 + self.k2 + self.k3
    }

    pub fn bounds(&self, n: usize) -> GroupBounds {
        GroupBounds {
            n1: self.n1,
            n2: self.n2,
            n,
        }
    }

    pub fn validate(&self, k: usize, n: usize) -> Result<(), CurriculumError> {
        let fail = |reason: String| {
            Err(CurriculumError::Infeasible {
                stage: self.stage,
                reason,
            })
        };
        if self.bounds(n).validate().is_err() {
            return fail(format!(
                "need 1 <= n1 < n2 < n, got n1={} n2={} n={n}",
                self.n1, self.n2
            ));
        }
        if self.k() != k {
            return fail(format!("k1+k2+k3 = {} but k = {k}", self.k()));
        }
        if self.k1 > self.n1 {
            return fail(format!("k1={} exceeds n1={}", self.k1, self.n1));
        }
        if self.k2 > self.n2 - self.n1 {
            return fail(format!("k2={} exceeds n2-n1={}", self.k2, self.n2 - self.n1));
        }
        if self.k3 > n - self.n2 {
            return fail(format!("k3={} exceeds n-n2={}", self.k3, n - self.n2));
        }
        Ok(())
    }
}

/// Three stages for k=5, n=20: n1 = 1/3/5, n2 = 15, k-vectors (1,2,2), (3,2,0), (5,0,0).
pub fn default_schedules() -> Vec<StageSchedule> {
    [(1, 1, 1, 2, 2), (2, 3, 3, 2, 0), (3, 5, 5, 0, 0)]
        .into_iter()
        .map(|(stage, n1, k1, k2, k3)| StageSchedule {
            stage,
            n1,
            n2: 15,
            k1,
            k2,
            k3,
        })
        .collect()
}

/// Checks each schedule and the easy-to-hard direction: k1 non-decreasing,
/// k2 and k3 non-increasing, stages numbered 1..S.
pub fn validate_schedules(schedules: &[StageSchedule], k: usize, n: usize) -> Result<(), CurriculumError> {
    for (i, s) in schedules.iter().enumerate() {
        if s.stage != i + 1 {
            return Err(CurriculumError::Infeasible {
                stage: s.stage,
                reason: format!("stages must be numbered 1..S in order, found {} at index {i}", s.stage),
            });
        }
        s.validate(k, n)?;
        if i > 0 {
            let p = &schedules[i - 1];
            if s.k1 < p.k1 || s.k2 > p.k2 || s.k3 > p.k3 {
                return Err(CurriculumError::Infeasible {
                    stage: s.stage,
                    reason: "k1 must not decrease and k2, k3 must not increase across stages".into(),
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Member {
    pub doc_id: String,
    /// Global 1-based position in the reranked list.
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrieverTrainingInstance {
    pub query_id: String,
    pub stage: usize,
    pub members: Vec<Member>,
}

impl RetrieverTrainingInstance {
    pub fn positions(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.position).collect()
    }

    pub fn validate(&self, schedule: &StageSchedule, n: usize) -> Result<(), CurriculumError> {
        let bad = |reason: String| CurriculumError::BadInstance {
            query_id: self.query_id.clone(),
            reason,
        };
        if self.stage != schedule.stage {
            return Err(bad(format!("stage {} != schedule stage {}", self.stage, schedule.stage)));
        }
        if self.members.windows(2).any(|w| w[0].position >= w[1].position) {
            return Err(bad("positions not strictly increasing".into()));
        }
        let mut counts = [0usize; 3];
        for m in &self.members {
            let g = match m.position {
                p if p >= 1 && p <= schedule.n1 => 0,
                p if p > schedule.n1 && p <= schedule.n2 => 1,
                p if p > schedule.n2 && p <= n => 2,
                p => return Err(bad(format!("position {p} outside 1..={n}"))),
            };
            counts[g] += 1;
        }
        if counts != [schedule.k1, schedule.k2, schedule.k3] {
            return Err(bad(format!(
                "group counts {counts:?} != ({}, {}, {})",
                schedule.k1, schedule.k2, schedule.k3
            )));
        }
        Ok(())
    }
}

/// Draws `k1`, `k2`, `k3` documents uniformly without replacement from the
/// three groups. The draw depends only on `(seed, query_id, stage, epoch)`.
pub fn sample_stage_instance(
    list: &RerankedList,
    schedule: &StageSchedule,
    seed: u64,
    epoch: usize,
) -> Result<RetrieverTrainingInstance, CurriculumError> {
    schedule.validate(schedule.k(), list.len())?;
    let groups = partition_groups(list, schedule.bounds(list.len()))?;
    let mut rng = seeds::rng_for(
        seed,
        &[&list.query_id, "stage", &schedule.stage.to_string(), &epoch.to_string()],
    );
    let mut members = Vec::with_capacity(schedule.k());
    for (group, take) in groups.as_array().iter().zip([schedule.k1, schedule.k2, schedule.k3]) {
        for i in index::sample(&mut rng, group.len(), take) {
            members.push(Member {
                doc_id: group[i].doc_id.clone(),
                position: group[i].position,
            });
        }
    }
    members.sort_by_key(|m| m.position);
    Ok(RetrieverTrainingInstance {
        query_id: list.query_id.clone(),
        stage: schedule.stage,
        members,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDataset {
    pub schedule: StageSchedule,
    pub seed: u64,
    pub epoch: usize,
    pub instances: Vec<RetrieverTrainingInstance>,
}

/// One instance per query, sorted by query_id.
pub fn build_stage_dataset(
    lists: &[RerankedList],
    schedule: &StageSchedule,
    n: usize,
    seed: u64,
    epoch: usize,
) -> Result<StageDataset, CurriculumError> {
    schedule.validate(schedule.k(), n)?;
    let short: Vec<String> = lists
        .iter()
        .filter(|l| l.len() != n)
        .map(|l| l.query_id.clone())
        .collect();
    if !short.is_empty() {
        return Err(CurriculumError::ShortLists { n, query_ids: short });
    }
    let mut instances = lists
        .par_iter()
        .map(|l| sample_stage_instance(l, schedule, seed, epoch))
        .collect::<Result<Vec<_>, _>>()?;
    instances.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    Ok(StageDataset {
        schedule: *schedule,
        seed,
        epoch,
        instances,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankGapStats {
    /// Mean over instances of the mean pairwise |position difference|.
    pub avg_gap: f64,
    pub max_gap: usize,
    /// Standard error of `avg_gap` across instances.
    pub std_error: f64,
    pub instances: usize,
}

/// Mean pairwise position gap inside one instance, `None` with fewer than two members.
pub fn instance_mean_gap(positions: &[usize]) -> Option<f64> {
    let k = positions.len();
    if k < 2 {
        return None;
    }
    let mut sum = 0usize;
    for a in 0..k {
        for b in a + 1..k {
            sum += positions[a].abs_diff(positions[b]);
        }
    }
    Some(sum as f64 / (k * (k - 1) / 2) as f64)
}

pub fn rank_gap_stats(instances: &[RetrieverTrainingInstance]) -> Result<RankGapStats, CurriculumError> {
    let Some(first) = instances.first() else {
        return Err(CurriculumError::EmptyOrMixed);
    };
    if instances.iter().any(|i| i.stage != first.stage) {
        return Err(CurriculumError::EmptyOrMixed);
    }
    let mut means = Vec::with_capacity(instances.len());
    let mut max_gap = 0;
    for inst in instances {
        let pos = inst.positions();
        if let (Some(lo), Some(hi)) = (pos.iter().min(), pos.iter().max()) {
            max_gap = max_gap.max(hi - lo);
        }
        if let Some(m) = instance_mean_gap(&pos) {
            means.push(m);
        }
    }
    let count = means.len();
    let avg_gap = if count == 0 { 0.0 } else { means.iter().sum::<f64>() / count as f64 };
    let std_error = if count < 2 {
        0.0
    } else {
        let var = means.iter().map(|m| (m - avg_gap).powi(2)).sum::<f64>() / (count - 1) as f64;
        (var / count as f64).sqrt()
    };
    Ok(RankGapStats {
        avg_gap,
        max_gap,
        std_error,
        instances: instances.len(),
    })
}
