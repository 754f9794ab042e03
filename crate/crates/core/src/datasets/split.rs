use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetCollection;
use crate::error::{Error, Result};

/// Region or attribute counts for (train, validation, target).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub target: usize,
}

impl SplitCounts {
    /// Validation and target get `floor(n · f)`, training the remainder.
    pub fn from_fractions(n: usize, fractions: [f64; 3]) -> Result<Self> {
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
        }
        // the small slack keeps 60 · (8/60) from flooring to 7
        let floor = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
        let (validation, target) = (floor(fractions[1]), floor(fractions[2]));
        Ok(Self {
            train: n.saturating_sub(validation + target),
            validation,
            target,
        })
    }

    fn total(&self) -> usize {
        self.train + self.validation + self.target
    }
}

/// Disjoint training, validation and target collections.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: DatasetCollection,
    pub validation: DatasetCollection,
    pub target: DatasetCollection,
    pub regions: [BTreeSet<String>; 3],
    pub attributes: [BTreeSet<String>; 3],
}

pub fn split(col: &DatasetCollection, region_fractions: [f64; 3], attribute_fractions: [f64; 3], seed: u64) -> Result<Split> {
    let regions = SplitCounts::from_fractions(col.regions().len(), region_fractions)?;
    let attributes = SplitCounts::from_fractions(col.attributes().len(), attribute_fractions)?;
    split_counts(col, regions, attributes, seed)
}

fn partition(mut ids: Vec<String>, counts: SplitCounts, rng: &mut ChaCha8Rng, what: &str) -> Result<[BTreeSet<String>; 3]> {
    if counts.total() != ids.len() {
        return Err(Error::Config(format!(
            "{what} split {}/{}/{} does not match the {} available",
            counts.train,
            counts.validation,
            counts.target,
            ids.len()
        )));
    }
    if counts.train == 0 || counts.validation == 0 || counts.target == 0 {
        return Err(Error::Config(format!(
            "{what} split {}/{}/{} leaves a partition empty",
            counts.train, counts.validation, counts.target
        )));
    }
    ids.shuffle(rng);
    let target = ids.split_off(counts.train + counts.validation);
    let validation = ids.split_off(counts.train);
    Ok([ids.into_iter().collect(), validation.into_iter().collect(), target.into_iter().collect()])
}

/// Shuffles regions and attributes with `seed` and partitions both axes.
/// A task lands in a partition only when its region and attribute both do.
pub fn split_counts(col: &DatasetCollection, regions: SplitCounts, attributes: SplitCounts, seed: u64) -> Result<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = partition(col.regions(), regions, &mut rng, "region")?;
    let a = partition(col.attributes(), attributes, &mut rng, "attribute")?;
    let out = Split {
        train: col.restrict(&r[0], &a[0]),
        validation: col.restrict(&r[1], &a[1]),
        target: col.restrict(&r[2], &a[2]),
        regions: r,
        attributes: a,
    };
    for (name, part) in [("training", &out.train), ("validation", &out.validation), ("target", &out.target)] {
        if part.is_empty() {
            return Err(Error::Data(format!("{name} split has no tasks")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::TaskDataset;
    use crate::linalg::Matrix;

    fn grid(regions: usize, attrs: usize) -> DatasetCollection {
        let mut col = DatasetCollection::new(0);
        for r in 0..regions {
            for a in 0..attrs {
                col.insert(TaskDataset::new(format!("r{r}"), format!("a{a}"), Matrix::zeros(1, 2), vec![0.0]).unwrap())
                    .unwrap();
            }
        }
        col
    }

    #[test]
    fn floor_rule() {
        let c = SplitCounts::from_fractions(10, [0.8, 0.1, 0.1]).unwrap();
        assert_eq!((c.train, c.validation, c.target), (8, 1, 1));
        let c = SplitCounts::from_fractions(60, [40.0 / 60.0, 8.0 / 60.0, 12.0 / 60.0]).unwrap();
        assert_eq!((c.train, c.validation, c.target), (40, 8, 12));
        assert!(SplitCounts::from_fractions(10, [0.5, 0.1, 0.1]).is_err());
    }

    #[test]
    fn partitions_are_disjoint_and_seeded() {
        let col = grid(10, 5);
        let s = split(&col, [0.8, 0.1, 0.1], [0.6, 0.2, 0.2], 7).unwrap();
        assert_eq!(s.train.len(), 8 * 3);
        assert_eq!(s.target.len(), 1);
        for t in s.target.tasks() {
            assert!(!s.regions[0].contains(&t.region));
            assert!(!s.attributes[0].contains(&t.attribute));
        }
        assert_eq!(split(&col, [0.8, 0.1, 0.1], [0.6, 0.2, 0.2], 7).unwrap(), s);
    }

    #[test]
    fn empty_partition_is_an_error() {
        assert!(split(&grid(3, 3), [0.9, 0.05, 0.05], [0.4, 0.3, 0.3], 0).is_err());
    }
}
