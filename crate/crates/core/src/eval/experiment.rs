use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{evaluate, mean_se, summarize, EvalConfig, MethodSummary, TaskScore};
use crate::baselines::{AnyModel, FineTune};
use crate::datasets::{generate_synthetic, split_counts, DatasetCollection, SplitCounts, SyntheticConfig};
use crate::error::{Error, Result};
use crate::gp::MeanMode;
use crate::model::ModelKind;
use crate::trainer::{train_model, build_model, TrainConfig, TrainOutcome, Variant};

/// A trainable entry in a comparison table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// A model kind trained with the base configuration's objective.
    Model(ModelKind),
    /// A named variant of the GP model.
    Variant(Variant),
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Model(k) => k.label(),
            Method::Variant(v) => v.name(),
        }
    }

    /// Training configuration for this method derived from `base`.
    pub fn config(&self, base: &TrainConfig) -> TrainConfig {
        match *self {
            Method::Variant(v) => base.clone().with_variant(v),
            Method::Model(k) => {
                let mut c = base.clone();
                c.model = k;
                if k != ModelKind::Gp {
                    c.mean_mode = MeanMode::Full;
                }
                c
            }
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.parse::<ModelKind>()
            .map(Method::Model)
            .or_else(|_| s.parse::<Variant>().map(Method::Variant))
            .map_err(|_| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Raw training, validation and target collections.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentData {
    pub train: DatasetCollection,
    pub validation: DatasetCollection,
    pub target: DatasetCollection,
}

impl ExperimentData {
    /// Generates the synthetic benchmark and splits it by region and attribute.
    pub fn synthetic(cfg: &SyntheticConfig, regions: SplitCounts, attributes: SplitCounts, split_seed: u64) -> Result<Self> {
        Self::from_collection(&generate_synthetic(cfg)?, regions, attributes, split_seed)
    }

    pub fn from_collection(col: &DatasetCollection, regions: SplitCounts, attributes: SplitCounts, split_seed: u64) -> Result<Self> {
        let s = split_counts(col, regions, attributes, split_seed)?;
        Ok(Self {
            train: s.train,
            validation: s.validation,
            target: s.target,
        })
    }

    /// Training tasks restricted to the first `k` training regions.
    pub fn with_train_regions(&self, k: usize) -> Result<Self> {
        let all = self.train.regions();
        if k == 0 || k > all.len() {
            return Err(Error::Config(format!("{k} training regions requested, {} available", all.len())));
        }
        let keep: BTreeSet<String> = all.into_iter().take(k).collect();
        let attrs: BTreeSet<String> = self.train.attributes().into_iter().collect();
        Ok(Self {
            train: self.train.restrict(&keep, &attrs),
            ..self.clone()
        })
    }

    /// Training tasks restricted to the first `k` training attributes.
    pub fn with_train_attributes(&self, k: usize) -> Result<Self> {
        let all = self.train.attributes();
        if k == 0 || k > all.len() {
            return Err(Error::Config(format!("{k} training attributes requested, {} available", all.len())));
        }
        let keep: BTreeSet<String> = all.into_iter().take(k).collect();
        let regions: BTreeSet<String> = self.train.regions().into_iter().collect();
        Ok(Self {
            train: self.train.restrict(&regions, &keep),
            ..self.clone()
        })
    }
}

/// Trained models and target scores of several methods over several seeds.
#[derive(Clone, Debug)]
pub struct MethodRun {
    pub scores: Vec<TaskScore>,
    pub summary: Vec<MethodSummary>,
    /// `(method, seed, outcome)` per trained model.
    pub trained: Vec<(String, u64, TrainOutcome)>,
}

impl MethodRun {
    pub fn model(&self, method: &str, seed: u64) -> Option<&AnyModel<f64>> {
        self.trained
            .iter()
            .find(|(m, s, _)| m == method && *s == seed)
            .map(|(_, _, o)| &o.model)
    }
}

fn train_all(
    methods: &[Method],
    base: &TrainConfig,
    train: &DatasetCollection,
    validation: &DatasetCollection,
    seed: u64,
) -> Result<Vec<(String, TrainOutcome)>> {
    let mut out: Vec<(String, TrainOutcome)> = Vec::new();
    for m in methods {
        let mut cfg = m.config(base);
        cfg.seed = seed;
        // fine-tuning starts from the shared network; reuse it if trained
        let nn_twin = (cfg.model == ModelKind::Ft)
            .then(|| out.iter().find(|(l, _)| l == Method::Model(ModelKind::Nn).label()))
            .flatten();
        let outcome = match nn_twin {
            Some((_, nn)) => {
                let mut o = nn.clone();
                if let AnyModel::Nn(net) = &o.model {
                    o.model = AnyModel::Nn(net.clone().with_fine_tune(FineTune {
                        epochs: cfg.ft_epochs,
                        lr: cfg.ft_learning_rate,
                    }));
                }
                o
            }
            None => train_model(&cfg, build_model(&cfg, train.input_dim())?, train, validation)?,
        };
        out.push((m.label().to_string(), outcome));
    }
    Ok(out)
}

/// Trains every method for every seed and scores it on the target tasks.
/// Seed `s` sets both the training seed and the support draws.
pub fn run_methods(methods: &[Method], base: &TrainConfig, data: &ExperimentData, seeds: &[u64], eval: &EvalConfig) -> Result<MethodRun> {
    if methods.is_empty() || seeds.is_empty() {
        return Err(Error::Config("need at least one method and one seed".into()));
    }
    let train = data.train.ensure_normalized()?;
    let validation = data.validation.ensure_normalized()?;
    let mut scores = Vec::new();
    let mut trained = Vec::new();
    for &seed in seeds {
        let models = train_all(methods, base, &train, &validation, seed)?;
        let refs: Vec<(&str, &AnyModel<f64>)> = models.iter().map(|(l, o)| (l.as_str(), &o.model)).collect();
        scores.extend(evaluate(&refs, &data.target, &EvalConfig { seed, ..eval.clone() })?);
        trained.extend(models.into_iter().map(|(l, o)| (l, seed, o)));
    }
    Ok(MethodRun {
        summary: summarize(&scores),
        scores,
        trained,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SupportSize,
    NTrainAttributes,
    NTrainRegions,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "support_size" => Ok(SweepAxis::SupportSize),
            "n_train_attributes" => Ok(SweepAxis::NTrainAttributes),
            "n_train_regions" => Ok(SweepAxis::NTrainRegions),
            _ => Err(Error::Config(format!("unknown sweep axis {s:?}"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::SupportSize => "support_size",
            SweepAxis::NTrainAttributes => "n_train_attributes",
            SweepAxis::NTrainRegions => "n_train_regions",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    pub method: String,
    pub n: usize,
    pub mse_mean: f64,
    pub mse_se: f64,
    pub ll_mean: f64,
    pub ll_se: f64,
}

fn rows_for(value: usize, scores: &[TaskScore], methods: &[Method]) -> Vec<SweepRow> {
    methods
        .iter()
        .map(|m| {
            let mine: Vec<&TaskScore> = scores.iter().filter(|s| s.method == m.label()).collect();
            let mse: Vec<f64> = mine.iter().map(|s| s.mse).collect();
            let ll: Vec<f64> = mine.iter().map(|s| s.log_likelihood).filter(|v| v.is_finite()).collect();
            let (mse_mean, mse_se) = mean_se(&mse);
            let (ll_mean, ll_se) = mean_se(&ll);
            SweepRow {
                value,
                method: m.label().to_string(),
                n: mine.len(),
                mse_mean,
                mse_se,
                ll_mean,
                ll_se,
            }
        })
        .collect()
}

/// A raw score tagged with the axis value it was taken at.
pub type SweepScore = (usize, TaskScore);

/// Target scores as one axis varies. Support sizes are evaluated on models
/// trained once per seed; the other axes retrain on a reduced training set.
/// Returns `|values| x |methods|` rows and the raw scores behind them.
pub fn sweep(
    axis: SweepAxis,
    values: &[usize],
    methods: &[Method],
    base: &TrainConfig,
    data: &ExperimentData,
    seeds: &[u64],
    eval: &EvalConfig,
) -> Result<(Vec<SweepRow>, Vec<SweepScore>)> {
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    if values.is_empty() || values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("sweep values must be non-empty and strictly ascending".into()));
    }
    let mut rows = Vec::new();
    let mut raw = Vec::new();
    match axis {
        SweepAxis::SupportSize => {
            let min = data.target.min_task_len();
            if let Some(&v) = values.iter().find(|&&v| v == 0 || v >= min) {
                return Err(Error::Config(format!("support size {v} is infeasible for target tasks of {min} points")));
            }
            let train = data.train.ensure_normalized()?;
            let validation = data.validation.ensure_normalized()?;
            let mut trained = Vec::new();
            for &seed in seeds {
                for (l, o) in train_all(methods, base, &train, &validation, seed)? {
                    trained.push((l, seed, o));
                }
            }
            for &v in values {
                let mut scores = Vec::new();
                for &seed in seeds {
                    let refs: Vec<(&str, &AnyModel<f64>)> = trained
                        .iter()
                        .filter(|(_, s, _)| *s == seed)
                        .map(|(l, _, o)| (l.as_str(), &o.model))
                        .collect();
                    let cfg = EvalConfig {
                        support_size: v,
                        seed,
                        ..eval.clone()
                    };
                    scores.extend(evaluate(&refs, &data.target, &cfg)?);
                }
                rows.extend(rows_for(v, &scores, methods));
                raw.extend(scores.into_iter().map(|s| (v, s)));
            }
        }
        SweepAxis::NTrainAttributes | SweepAxis::NTrainRegions => {
            for &v in values {
                let reduced = if axis == SweepAxis::NTrainRegions {
                    data.with_train_regions(v)?
                } else {
                    data.with_train_attributes(v)?
                };
                let run = run_methods(methods, base, &reduced, seeds, eval)?;
                rows.extend(rows_for(v, &run.scores, methods));
                raw.extend(run.scores.into_iter().map(|s| (v, s)));
            }
        }
    }
    Ok((rows, raw))
}

pub fn sweep_table(axis: SweepAxis, rows: &[SweepRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([&axis.to_string(), "method", "n", "mse_mean", "mse_se", "ll_mean", "ll_se"])?;
    let f = |v: f64| if v.is_finite() { v.to_string() } else { String::new() };
    for r in rows {
        out.write_record([
            r.value.to_string(),
            r.method.clone(),
            r.n.to_string(),
            f(r.mse_mean),
            f(r.mse_se),
            f(r.ll_mean),
            f(r.ll_se),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Trains and scores the requested GP variants.
pub fn ablate(variants: &[Variant], base: &TrainConfig, data: &ExperimentData, seeds: &[u64], eval: &EvalConfig) -> Result<MethodRun> {
    let methods: Vec<Method> = variants.iter().map(|&v| Method::Variant(v)).collect();
    run_methods(&methods, base, data, seeds, eval)
}

/// Variants as columns; rows are test MSE and test log-likelihood with their
/// standard errors.
pub fn ablation_table(summary: &[MethodSummary], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["metric".to_string()];
    header.extend(summary.iter().map(|s| s.method.clone()));
    out.write_record(&header)?;
    let f = |v: f64| if v.is_finite() { v.to_string() } else { String::new() };
    type Column = fn(&MethodSummary) -> f64;
    let rows: [(&str, Column); 4] = [
        ("test_mse", |s| s.mse_mean),
        ("test_mse_se", |s| s.mse_se),
        ("test_log_likelihood", |s| s.ll_mean),
        ("test_log_likelihood_se", |s| s.ll_se),
    ];
    for (name, get) in rows {
        let mut rec = vec![name.to_string()];
        rec.extend(summary.iter().map(|s| f(get(s))));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
