use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DatasetCollection, TaskDataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl ColumnStats {
    pub const IDENTITY: ColumnStats = ColumnStats { mean: 0.0, std: 1.0 };

    /// Population mean and standard deviation. Returns `false` alongside the
    /// stats when the spread is degenerate and `std` was forced to 1.
    pub fn fit(values: &[f64]) -> (Self, bool) {
        let n = values.len();
        if n == 0 {
            return (Self::IDENTITY, false);
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return (Self { mean, std: 1.0 }, false);
        }
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if std == 0.0 || std <= 1e-12 * mean.abs() {
            (Self { mean, std: 1.0 }, false)
        } else {
            (Self { mean, std }, true)
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormPolicy {
    /// Statistics over every point of the task.
    Offline,
    /// Location statistics over the task's full location set, value
    /// statistics over the support set only.
    SupportOnly,
}

impl fmt::Display for NormPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormPolicy::Offline => "offline",
            NormPolicy::SupportOnly => "support-only",
        })
    }
}

impl FromStr for NormPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").to_ascii_lowercase().as_str() {
            "offline" => Ok(NormPolicy::Offline),
            "support-only" | "support" => Ok(NormPolicy::SupportOnly),
            _ => Err(Error::Config(format!("unknown normalization policy {s:?}"))),
        }
    }
}

/// Per-column statistics used to normalize one task, kept for
/// de-normalizing predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub policy: NormPolicy,
    pub location: Vec<ColumnStats>,
    pub value: ColumnStats,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl NormalizationRecord {
    /// Offline statistics of a raw task.
    pub fn offline(task: &TaskDataset) -> Self {
        Self::fit(task, NormPolicy::Offline, &task.y)
    }

    /// Location statistics from all of the task's locations, value
    /// statistics from the support rows `support` only.
    pub fn support_only(task: &TaskDataset, support: &[usize]) -> Self {
        let ys: Vec<f64> = support.iter().map(|&i| task.y[i]).collect();
        Self::fit(task, NormPolicy::SupportOnly, &ys)
    }

    fn fit(task: &TaskDataset, policy: NormPolicy, ys: &[f64]) -> Self {
        let mut warnings = Vec::new();
        let mut location = Vec::with_capacity(task.x.cols());
        let mut column = Vec::with_capacity(task.len());
        for j in 0..task.x.cols() {
            column.clear();
            column.extend((0..task.len()).map(|i| task.x[(i, j)]));
            let (stats, ok) = ColumnStats::fit(&column);
            if !ok && column.len() > 1 {
                warnings.push(format!("location column {} has zero variance; std set to 1", j + 1));
            }
            location.push(stats);
        }
        let (value, ok) = ColumnStats::fit(ys);
        if !ok && ys.len() > 1 {
            warnings.push("value column has zero variance; std set to 1".into());
        }
        for w in &warnings {
            log::warn!("task ({}, {}): {w}", task.region, task.attribute);
        }
        Self {
            policy,
            location,
            value,
            warnings,
        }
    }

    pub fn normalize_x(&self, x: &Matrix<f64>) -> Matrix<f64> {
        Matrix::from_fn(x.rows(), x.cols(), |i, j| self.location[j].apply(x[(i, j)]))
    }

    pub fn denormalize_x(&self, x: &Matrix<f64>) -> Matrix<f64> {
        Matrix::from_fn(x.rows(), x.cols(), |i, j| self.location[j].invert(x[(i, j)]))
    }

    pub fn normalize_y(&self, y: f64) -> f64 {
        self.value.apply(y)
    }

    pub fn denormalize_y(&self, y: f64) -> f64 {
        self.value.invert(y)
    }

    pub fn normalize_variance(&self, v: f64) -> f64 {
        v / (self.value.std * self.value.std)
    }

    pub fn denormalize_variance(&self, v: f64) -> f64 {
        v * self.value.std * self.value.std
    }
}

impl TaskDataset {
    /// Copy with locations and values mapped through `record`.
    pub fn normalized_with(&self, record: NormalizationRecord) -> Result<Self> {
        if self.norm.is_some() {
            return Err(Error::Data(format!(
                "task ({}, {}) is already normalized",
                self.region, self.attribute
            )));
        }
        if record.location.len() != self.x.cols() {
            return Err(Error::Data("normalization record has the wrong width".into()));
        }
        Ok(Self {
            region: self.region.clone(),
            attribute: self.attribute.clone(),
            x: record.normalize_x(&self.x),
            y: self.y.iter().map(|&v| record.normalize_y(v)).collect(),
            norm: Some(record),
        })
    }

    /// Raw-unit copy of a normalized task.
    pub fn denormalized(&self) -> Result<Self> {
        let record = self.norm.as_ref().ok_or_else(|| {
            Error::Data(format!("task ({}, {}) has no normalization record", self.region, self.attribute))
        })?;
        Ok(Self {
            region: self.region.clone(),
            attribute: self.attribute.clone(),
            x: record.denormalize_x(&self.x),
            y: self.y.iter().map(|&v| record.denormalize_y(v)).collect(),
            norm: None,
        })
    }
}

impl DatasetCollection {
    /// Offline per-task normalization of a raw collection.
    pub fn normalize(&self) -> Result<Self> {
        let mut out = Self::new(self.aux_dim());
        for t in self.tasks() {
            out.insert(t.normalized_with(NormalizationRecord::offline(t))?)?;
        }
        Ok(out)
    }

    /// Normalized collection as is, raw collection normalized offline.
    pub fn ensure_normalized(&self) -> Result<Self> {
        if self.is_normalized() {
            Ok(self.clone())
        } else {
            self.normalize()
        }
    }

    pub fn records(&self) -> BTreeMap<String, BTreeMap<String, NormalizationRecord>> {
        let mut map: BTreeMap<String, BTreeMap<String, NormalizationRecord>> = BTreeMap::new();
        for t in self.tasks() {
            if let Some(r) = &t.norm {
                map.entry(t.region.clone()).or_default().insert(t.attribute.clone(), r.clone());
            }
        }
        map
    }
}

/// Sidecar layout: region id → attribute id → record.
pub type SidecarEntry = BTreeMap<String, BTreeMap<String, NormalizationRecord>>;

pub fn save_sidecar(col: &DatasetCollection, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(&col.records())?)?;
    Ok(())
}

pub fn load_sidecar(path: impl AsRef<Path>) -> Result<SidecarEntry> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(xs: &[[f64; 2]], ys: &[f64]) -> TaskDataset {
        let x = Matrix::from_fn(xs.len(), 2, |i, j| xs[i][j]);
        TaskDataset::new("r", "a", x, ys.to_vec()).unwrap()
    }

    #[test]
    fn two_point_values() {
        let t = task(&[[0.0, 1.0], [1.0, 3.0]], &[0.0, 2.0]);
        let n = t.normalized_with(NormalizationRecord::offline(&t)).unwrap();
        assert_eq!(n.y, vec![-1.0, 1.0]);
        let r = n.norm.as_ref().unwrap();
        assert_eq!(r.value, ColumnStats { mean: 1.0, std: 1.0 });
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn constant_column_becomes_zero() {
        let t = task(&[[0.1, 1.0], [0.1, 2.0], [0.1, 3.0]], &[4.0, 4.0, 4.0]);
        let n = t.normalized_with(NormalizationRecord::offline(&t)).unwrap();
        let r = n.norm.as_ref().unwrap();
        assert_eq!(r.location[0].std, 1.0);
        assert_eq!(r.value.std, 1.0);
        assert_eq!(r.warnings.len(), 2);
        assert!(n.y.iter().all(|&v| v.abs() < 1e-15));
        assert!((0..3).all(|i| n.x[(i, 0)].abs() < 1e-15));
    }

    #[test]
    fn support_only_uses_support_values() {
        let t = task(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]], &[10.0, 12.0, 100.0, -50.0]);
        let r = NormalizationRecord::support_only(&t, &[0, 1]);
        assert_eq!(r.value, ColumnStats { mean: 11.0, std: 1.0 });
        assert_eq!(r.location[0].mean, 1.5);
        assert_eq!(r.policy, NormPolicy::SupportOnly);
    }

    #[test]
    fn round_trip_and_sidecar() {
        let t = task(&[[0.3, -2.0], [1.7, 5.0], [2.2, 0.5]], &[1e3, -7.25, 0.125]);
        let n = t.normalized_with(NormalizationRecord::offline(&t)).unwrap();
        let back = n.denormalized().unwrap();
        for (a, b) in back.y.iter().zip(&t.y) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        assert!(back.x.max_abs_diff(&t.x) < 1e-12);
        assert!(n.normalized_with(NormalizationRecord::offline(&t)).is_err());

        let mut col = DatasetCollection::new(0);
        col.insert(n).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("norm.json");
        save_sidecar(&col, &path).unwrap();
        assert_eq!(load_sidecar(&path).unwrap(), col.records());
    }
}
