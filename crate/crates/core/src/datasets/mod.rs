//! Task datasets grouped by (region, attribute), CSV ingestion,
//! normalization, region/attribute splits and a synthetic generator.

mod io;
mod normalize;
mod split;
mod synthetic;

pub use io::{load_csv, read_csv, save_csv, write_csv};
pub use normalize::{
    load_sidecar, save_sidecar, ColumnStats, NormPolicy, NormalizationRecord, SidecarEntry,
};
pub use split::{split, split_counts, Split, SplitCounts};
pub use synthetic::{generate_synthetic, grid_locations, sample_field, Range, SyntheticConfig};

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// `(region_id, attribute_id)`.
pub type TaskKey = (String, String);

/// Observations of one attribute in one region.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    pub region: String,
    pub attribute: String,
    /// `N x (2 + M)`: two coordinates then the auxiliary features.
    pub x: Matrix<f64>,
    pub y: Vec<f64>,
    /// Present once the task has been normalized.
    pub norm: Option<NormalizationRecord>,
}

impl TaskDataset {
    pub fn new(region: impl Into<String>, attribute: impl Into<String>, x: Matrix<f64>, y: Vec<f64>) -> Result<Self> {
        let (region, attribute) = (region.into(), attribute.into());
        if x.rows() != y.len() {
            return Err(Error::Data(format!(
                "task ({region}, {attribute}) has {} locations but {} values",
                x.rows(),
                y.len()
            )));
        }
        if x.cols() < 2 {
            return Err(Error::Data(format!(
                "task ({region}, {attribute}) needs at least two location columns"
            )));
        }
        Ok(Self {
            region,
            attribute,
            x,
            y,
            norm: None,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn key(&self) -> TaskKey {
        (self.region.clone(), self.attribute.clone())
    }

    /// Rows `idx` as an `(x, y)` pair of matrices, `y` a column.
    pub fn rows(&self, idx: &[usize]) -> (Matrix<f64>, Matrix<f64>) {
        let d = self.x.cols();
        let x = Matrix::from_fn(idx.len(), d, |i, j| self.x[(idx[i], j)]);
        let y = Matrix::column(idx.iter().map(|&i| self.y[i]).collect());
        (x, y)
    }
}

/// Tasks keyed by `(region, attribute)`, all with the same number of
/// auxiliary columns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetCollection {
    aux_dim: usize,
    tasks: BTreeMap<TaskKey, TaskDataset>,
}

impl DatasetCollection {
    pub fn new(aux_dim: usize) -> Self {
        Self {
            aux_dim,
            tasks: BTreeMap::new(),
        }
    }

    pub fn aux_dim(&self) -> usize {
        self.aux_dim
    }

    /// Width of a location vector, `2 + M`.
    pub fn input_dim(&self) -> usize {
        2 + self.aux_dim
    }

    pub fn insert(&mut self, task: TaskDataset) -> Result<()> {
        if task.x.cols() != self.input_dim() {
            return Err(Error::Data(format!(
                "task ({}, {}) has {} location columns, collection expects {}",
                task.region,
                task.attribute,
                task.x.cols(),
                self.input_dim()
            )));
        }
        self.tasks.insert(task.key(), task);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, region: &str, attribute: &str) -> Option<&TaskDataset> {
        self.tasks.get(&(region.to_string(), attribute.to_string()))
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskDataset> {
        self.tasks.values()
    }

    pub fn tasks_mut(&mut self) -> impl Iterator<Item = &mut TaskDataset> {
        self.tasks.values_mut()
    }

    /// Sorted region ids.
    pub fn regions(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.tasks.keys().map(|(r, _)| r).collect();
        set.into_iter().cloned().collect()
    }

    /// Sorted attribute ids observed in `region`.
    pub fn attributes_of(&self, region: &str) -> Vec<String> {
        self.tasks
            .keys()
            .filter(|(r, _)| r == region)
            .map(|(_, c)| c.clone())
            .collect()
    }

    /// Sorted attribute ids across all regions.
    pub fn attributes(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.tasks.keys().map(|(_, c)| c).collect();
        set.into_iter().cloned().collect()
    }

    /// Tasks whose region and attribute are both in the given sets.
    pub fn restrict(&self, regions: &BTreeSet<String>, attributes: &BTreeSet<String>) -> Self {
        Self {
            aux_dim: self.aux_dim,
            tasks: self
                .tasks
                .iter()
                .filter(|((r, c), _)| regions.contains(r) && attributes.contains(c))
                .map(|(k, t)| (k.clone(), t.clone()))
                .collect(),
        }
    }

    /// Smallest task size, 0 when empty.
    pub fn min_task_len(&self) -> usize {
        self.tasks.values().map(TaskDataset::len).min().unwrap_or(0)
    }

    pub fn is_normalized(&self) -> bool {
        !self.is_empty() && self.tasks.values().all(|t| t.norm.is_some())
    }
}
