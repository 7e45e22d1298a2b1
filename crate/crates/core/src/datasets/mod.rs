//! Seeded synthetic tasks and their on-disk archive.

mod archive;
mod cyclic;
mod lift;
mod mdi;
mod simplex;
mod trajectory;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::complex::SimplicialComplex;
use crate::error::{GsanError, Result};
use crate::filters::CochainBundle;

pub use archive::{read_archive, write_archive, ARCHIVE_VERSION};
pub use cyclic::{generate_cyclic_flow, loop_flow, CyclicParams};
pub use lift::{clique_lift, enumerate_simplex_candidates};
pub use mdi::{generate_mdi_task, imputation_input, log_stats, MdiParams};
pub use simplex::{generate_simplex_prediction_task, SimplexParams};
pub use trajectory::{generate_synthetic_flow, FlowParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Trajectory,
    Cyclic,
    Mdi,
    SimplexPrediction,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Trajectory => "trajectory",
            TaskKind::Cyclic => "cyclic",
            TaskKind::Mdi => "mdi",
            TaskKind::SimplexPrediction => "simplex_prediction",
        }
    }
}

/// Generator parameters, tagged by task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum DatasetParams {
    Trajectory(FlowParams),
    Cyclic(CyclicParams),
    Mdi(MdiParams),
    SimplexPrediction(SimplexParams),
}

impl DatasetParams {
    pub fn task(&self) -> TaskKind {
        match self {
            DatasetParams::Trajectory(_) => TaskKind::Trajectory,
            DatasetParams::Cyclic(_) => TaskKind::Cyclic,
            DatasetParams::Mdi(_) => TaskKind::Mdi,
            DatasetParams::SimplexPrediction(_) => TaskKind::SimplexPrediction,
        }
    }

    pub fn default_for(task: TaskKind) -> Self {
        match task {
            TaskKind::Trajectory => DatasetParams::Trajectory(FlowParams::default()),
            TaskKind::Cyclic => DatasetParams::Cyclic(CyclicParams::default()),
            TaskKind::Mdi => DatasetParams::Mdi(MdiParams::default()),
            TaskKind::SimplexPrediction => DatasetParams::SimplexPrediction(SimplexParams::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DatasetParams::Trajectory(p) => p.validate(),
            DatasetParams::Cyclic(p) => p.validate(),
            DatasetParams::Mdi(p) => p.validate(),
            DatasetParams::SimplexPrediction(p) => p.validate(),
        }
    }

    pub fn generate(&self, seed: u64) -> Result<TaskDataset> {
        match self {
            DatasetParams::Trajectory(p) => generate_synthetic_flow(p, seed),
            DatasetParams::Cyclic(p) => generate_cyclic_flow(p, seed),
            DatasetParams::Mdi(p) => generate_mdi_task(p, seed),
            DatasetParams::SimplexPrediction(p) => generate_simplex_prediction_task(p, seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Labels {
    /// One class per sample.
    Classes { labels: Vec<usize> },
    /// One target per simplex of `order`.
    Values { order: usize, values: Vec<f64> },
    /// Candidate simplices (sorted dense vertex tuples) with 0/1 labels.
    Candidates {
        order: usize,
        simplices: Vec<Vec<usize>>,
        labels: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Shuffled `n` indices cut by the given train/val fractions; each part is sorted.
    pub fn shuffled(n: usize, train: f64, val: f64, rng: &mut impl rand::Rng) -> Self {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let n_train = (train * n as f64).round() as usize;
        let n_val = ((val * n as f64).round() as usize).min(n - n_train);
        let mut s = Split {
            train: idx[..n_train].to_vec(),
            val: idx[n_train..n_train + n_val].to_vec(),
            test: idx[n_train + n_val..].to_vec(),
        };
        s.train.sort_unstable();
        s.val.sort_unstable();
        s.test.sort_unstable();
        s
    }

    /// True when the parts are disjoint and cover `0..n`.
    pub fn is_partition(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    pub params: DatasetParams,
    pub seed: u64,
    pub complex: SimplicialComplex,
    pub inputs: Vec<CochainBundle>,
    pub labels: Labels,
    /// Per-simplex observation mask (true = observed).
    pub mask: Option<Vec<bool>>,
    /// Per-sample edge orientation flips (`±1` per edge) for samples that
    /// live in a re-oriented copy of the complex.
    pub orientations: BTreeMap<usize, Vec<f64>>,
    /// Sample indices, or simplex/candidate indices for single-input tasks.
    pub split: Split,
}

impl TaskDataset {
    pub fn task(&self) -> TaskKind {
        self.params.task()
    }

    /// Number of items the split ranges over.
    pub fn split_len(&self) -> usize {
        match &self.labels {
            Labels::Classes { labels } => labels.len(),
            Labels::Values { values, .. } => values.len(),
            Labels::Candidates { labels, .. } => labels.len(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let sizes = self.complex.sizes();
        for b in &self.inputs {
            b.check_sizes(&sizes)?;
        }
        if !self.split.is_partition(self.split_len()) {
            return Err(GsanError::ShapeError("split is not a partition".into()));
        }
        Ok(())
    }
}

pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> GsanError {
    GsanError::InvalidConfig {
        field: field.into(),
        reason: reason.into(),
    }
}
