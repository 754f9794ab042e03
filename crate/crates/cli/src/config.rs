//! Run configuration: one TOML file plus `--set section.key=value` overrides.

use std::path::{Path, PathBuf};

use fewshot_gp::datasets::{load_csv, DatasetCollection, SplitCounts, SyntheticConfig};
use fewshot_gp::eval::{EvalConfig, ExperimentData, Method, SweepAxis};
use fewshot_gp::trainer::{TrainConfig, Variant};
use fewshot_gp::{Error, Result};
use serde::{Deserialize, Serialize};

/// Per-axis partition, either counts or fractions of (train, validation, target).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitSpec {
    Counts([usize; 3]),
    Fractions([f64; 3]),
}

impl SplitSpec {
    fn counts(&self, n: usize) -> Result<SplitCounts> {
        match *self {
            SplitSpec::Counts([train, validation, target]) => Ok(SplitCounts {
                train,
                validation,
                target,
            }),
            SplitSpec::Fractions(f) => SplitCounts::from_fractions(n, f),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub regions: SplitSpec,
    pub attributes: SplitSpec,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            regions: SplitSpec::Counts([40, 8, 12]),
            attributes: SplitSpec::Counts([6, 2, 1]),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset CSV; the synthetic generator is used when absent.
    pub csv: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            axis: SweepAxis::SupportSize,
            values: vec![2, 5, 10],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub synthetic: SyntheticConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub seeds: Vec<u64>,
    pub methods: Vec<String>,
    pub variants: Vec<String>,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            synthetic: SyntheticConfig::default(),
            split: SplitConfig::default(),
            train: TrainConfig::desk(),
            eval: EvalConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
            methods: ["ours", "gpr", "np", "nn", "ft"].map(String::from).to_vec(),
            variants: Variant::ALL.iter().map(|v| v.name().to_string()).collect(),
            sweep: SweepConfig::default(),
        }
    }
}

fn set_path(root: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {p} is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses `text` after applying `key=value` overrides.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            set_path(&mut table, k.trim(), v.trim())?;
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        self.methods()?;
        self.variants()?;
        Ok(())
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        self.methods.iter().map(|m| m.parse()).collect()
    }

    pub fn variants(&self) -> Result<Vec<Variant>> {
        self.variants.iter().map(|v| v.parse()).collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Raw collection from the CSV file or the synthetic generator.
    pub fn raw_collection(&self) -> Result<DatasetCollection> {
        match &self.data.csv {
            Some(p) => load_csv(p),
            None => fewshot_gp::datasets::generate_synthetic(&self.synthetic),
        }
    }

    pub fn experiment(&self, raw: &DatasetCollection) -> Result<ExperimentData> {
        let regions = self.split.regions.counts(raw.regions().len())?;
        let attributes = self.split.attributes.counts(raw.attributes().len())?;
        ExperimentData::from_collection(raw, regions, attributes, self.split.seed)
    }
}
