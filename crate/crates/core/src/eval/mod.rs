//! Target-task evaluation, aggregate reports, sweeps, ablations and grid
//! prediction.

mod experiment;
mod grid;
mod stats;

pub use experiment::{ablate, ablation_table, run_methods, sweep, sweep_table, ExperimentData, Method, MethodRun, SweepAxis, SweepRow, SweepScore};
pub use grid::{predict_grid, write_grid_csv, AuxPlane, GridRow, GridSpec};
pub use stats::{mean_se, paired_t_test, PairedTTest};

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Eval, Graph};
use crate::datasets::{DatasetCollection, NormPolicy, NormalizationRecord, TaskDataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{gaussian_nll, mse, EpisodicModel, SupportSet};

/// Significance level of the paired comparisons.
pub const ALPHA: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub support_size: usize,
    /// Support draws per target task.
    pub repeats: usize,
    pub seed: u64,
    /// Normalization applied to the model's inputs at test time.
    pub policy: NormPolicy,
    /// Score in raw attribute units instead of offline-normalized units.
    pub raw_units: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            support_size: 5,
            repeats: 10,
            seed: 0,
            policy: NormPolicy::SupportOnly,
            raw_units: false,
        }
    }
}

/// Scores of one method on one support draw of one target task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub method: String,
    pub seed: u64,
    pub repeat: usize,
    pub region: String,
    pub attribute: String,
    pub n_query: usize,
    pub mse: f64,
    /// Mean predictive log density; NaN for models without a variance.
    pub log_likelihood: f64,
    pub predict_ms: f64,
}

impl TaskScore {
    fn pair_key(&self) -> (u64, usize, String, String) {
        (self.seed, self.repeat, self.region.clone(), self.attribute.clone())
    }
}

fn draw_seed(seed: u64, task: usize, repeat: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ ((task as u64) << 20) ^ repeat as u64
}

/// Support draw `repeat` for task number `task`: `n_s` rows for the support,
/// every other row as queries. Identical for every method.
pub fn support_draw(t: &TaskDataset, n_s: usize, seed: u64, task: usize, repeat: usize) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(draw_seed(seed, task, repeat));
    let support = index::sample(&mut rng, t.len(), n_s).into_vec();
    let mut mark = vec![false; t.len()];
    for &i in &support {
        mark[i] = true;
    }
    let query = (0..t.len()).filter(|&i| !mark[i]).collect();
    (support, query)
}

/// Predictive mean and variance of `model` for one task and support draw,
/// mapped into the scoring units (offline-normalized, or raw).
fn score_draw<M: EpisodicModel<f64>>(
    model: &M,
    task: &TaskDataset,
    support: &[usize],
    query: &[usize],
    cfg: &EvalConfig,
) -> Result<(f64, f64, f64)> {
    let offline = NormalizationRecord::offline(task);
    let input = match cfg.policy {
        NormPolicy::Offline => offline.clone(),
        NormPolicy::SupportOnly => NormalizationRecord::support_only(task, support),
    };
    let (sx, sy) = task.rows(support);
    let (qx, qy) = task.rows(query);
    let s = SupportSet::new(input.normalize_x(&sx), sy.map(|v| input.normalize_y(v)))?;
    let qx_n = input.normalize_x(&qx);

    let start = Instant::now();
    let adapted = model.adapt(&s)?;
    let m = adapted.as_ref().unwrap_or(model);
    let mut g = Eval;
    let pred = m.predict(&mut g, &s, &qx_n, m.has_variance(), None)?;
    let elapsed = start.elapsed().as_secs_f64() * 1e3;

    // normalized model output → raw → scoring units
    let to_score_mean = |v: f64| {
        let raw = input.denormalize_y(v);
        if cfg.raw_units {
            raw
        } else if cfg.policy == NormPolicy::Offline {
            v
        } else {
            offline.normalize_y(raw)
        }
    };
    let to_score_var = |v: f64| {
        let raw = input.denormalize_variance(v);
        if cfg.raw_units {
            raw
        } else if cfg.policy == NormPolicy::Offline {
            v
        } else {
            offline.normalize_variance(raw)
        }
    };
    let y_score = if cfg.raw_units { qy } else { qy.map(|v| offline.normalize_y(v)) };

    let mean = g.value(&pred.mean).map(to_score_mean);
    let y = g.constant(y_score)?;
    let mv = g.constant(mean)?;
    let err = mse(&mut g, &mv, &y)?.into_matrix().item();
    let ll = match pred.variance {
        Some(v) => {
            let var = g.value(&v).map(to_score_var);
            let vv = g.constant(var)?;
            -gaussian_nll(&mut g, &mv, &vv, &y)?.into_matrix().item()
        }
        None => f64::NAN,
    };
    Ok((err, ll, elapsed))
}

/// Scores every model on every target task for `cfg.repeats` support draws.
/// `target` holds raw (unnormalized) tasks.
pub fn evaluate<M: EpisodicModel<f64>>(models: &[(&str, &M)], target: &DatasetCollection, cfg: &EvalConfig) -> Result<Vec<TaskScore>> {
    if target.is_empty() {
        return Err(Error::Data("target collection is empty".into()));
    }
    if target.is_normalized() {
        return Err(Error::Data("evaluate expects raw target tasks".into()));
    }
    if cfg.support_size == 0 || cfg.repeats == 0 {
        return Err(Error::Config("support_size and repeats must be positive".into()));
    }
    for (name, m) in models {
        if m.input_dim() != target.input_dim() {
            return Err(Error::Data(format!(
                "model {name} expects {} input columns, target data has {}",
                m.input_dim(),
                target.input_dim()
            )));
        }
    }
    let mut out = Vec::new();
    for (ti, task) in target.tasks().enumerate() {
        if task.len() <= cfg.support_size {
            return Err(Error::Config(format!(
                "target task ({}, {}) has {} points, not enough for a support set of {}",
                task.region,
                task.attribute,
                task.len(),
                cfg.support_size
            )));
        }
        for repeat in 0..cfg.repeats {
            let (support, query) = support_draw(task, cfg.support_size, cfg.seed, ti, repeat);
            for (name, m) in models {
                let (err, ll, ms) = score_draw(*m, task, &support, &query, cfg)?;
                out.push(TaskScore {
                    method: name.to_string(),
                    seed: cfg.seed,
                    repeat,
                    region: task.region.clone(),
                    attribute: task.attribute.clone(),
                    n_query: query.len(),
                    mse: err,
                    log_likelihood: ll,
                    predict_ms: ms,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub n: usize,
    pub mse_mean: f64,
    pub mse_se: f64,
    pub ll_mean: f64,
    pub ll_se: f64,
    /// Paired test of this method's MSE against the best method's.
    pub mse_vs_best: Option<PairedTTest>,
    pub ll_vs_best: Option<PairedTTest>,
    /// Best, or not significantly different from the best.
    pub mse_top: bool,
    pub ll_top: bool,
    pub predict_ms_mean: f64,
}

/// Values of `metric` for two methods, paired on (seed, repeat, task).
pub fn paired_values(scores: &[TaskScore], a: &str, b: &str, metric: fn(&TaskScore) -> f64) -> (Vec<f64>, Vec<f64>) {
    let of = |m: &str| -> BTreeMap<_, f64> {
        scores
            .iter()
            .filter(|s| s.method == m)
            .map(|s| (s.pair_key(), metric(s)))
            .collect()
    };
    let (ma, mb) = (of(a), of(b));
    ma.iter()
        .filter_map(|(k, va)| mb.get(k).map(|vb| (*va, *vb)))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .unzip()
}

/// Methods in first-appearance order.
pub fn method_names(scores: &[TaskScore]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for s in scores {
        if !names.contains(&s.method) {
            names.push(s.method.clone());
        }
    }
    names
}

/// Per-method mean ± standard error over all rows, with paired t-tests
/// against the best method on each metric.
pub fn summarize(scores: &[TaskScore]) -> Vec<MethodSummary> {
    let names = method_names(scores);
    let column = |m: &str, f: fn(&TaskScore) -> f64| -> Vec<f64> {
        scores.iter().filter(|s| s.method == m).map(f).filter(|v| v.is_finite()).collect()
    };
    let mse_of: fn(&TaskScore) -> f64 = |s| s.mse;
    let ll_of: fn(&TaskScore) -> f64 = |s| s.log_likelihood;
    let mut out: Vec<MethodSummary> = names
        .iter()
        .map(|m| {
            let (mse_mean, mse_se) = mean_se(&column(m, mse_of));
            let (ll_mean, ll_se) = mean_se(&column(m, ll_of));
            let times = column(m, |s| s.predict_ms);
            MethodSummary {
                method: m.clone(),
                n: scores.iter().filter(|s| &s.method == m).count(),
                mse_mean,
                mse_se,
                ll_mean,
                ll_se,
                mse_vs_best: None,
                ll_vs_best: None,
                mse_top: false,
                ll_top: false,
                predict_ms_mean: mean_se(&times).0,
            }
        })
        .collect();

    let best_mse = out
        .iter()
        .filter(|s| s.mse_mean.is_finite())
        .min_by(|a, b| a.mse_mean.total_cmp(&b.mse_mean))
        .map(|s| s.method.clone());
    let best_ll = out
        .iter()
        .filter(|s| s.ll_mean.is_finite())
        .max_by(|a, b| a.ll_mean.total_cmp(&b.ll_mean))
        .map(|s| s.method.clone());
    for s in &mut out {
        if let Some(best) = &best_mse {
            if &s.method == best {
                s.mse_top = true;
            } else {
                let (a, b) = paired_values(scores, &s.method, best, mse_of);
                s.mse_vs_best = paired_t_test(&a, &b);
                s.mse_top = s.mse_vs_best.is_none_or(|t| !t.significant(ALPHA));
            }
        }
        if let Some(best) = &best_ll {
            if !s.ll_mean.is_finite() {
                continue;
            }
            if &s.method == best {
                s.ll_top = true;
            } else {
                let (a, b) = paired_values(scores, &s.method, best, ll_of);
                s.ll_vs_best = paired_t_test(&a, &b);
                s.ll_top = s.ll_vs_best.is_none_or(|t| !t.significant(ALPHA));
            }
        }
    }
    out
}

fn fmt_f(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

/// One row per (method, seed, repeat, task).
pub fn write_scores_csv(scores: &[TaskScore], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["method", "seed", "repeat", "region_id", "attribute_id", "n_query", "mse", "log_likelihood"])?;
    for s in scores {
        out.write_record([
            s.method.clone(),
            s.seed.to_string(),
            s.repeat.to_string(),
            s.region.clone(),
            s.attribute.clone(),
            s.n_query.to_string(),
            fmt_f(s.mse),
            fmt_f(s.log_likelihood),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a file written by [`write_scores_csv`]; `predict_ms` is not stored
/// and comes back as NaN.
pub fn read_scores_csv(r: impl std::io::Read) -> Result<Vec<TaskScore>> {
    let mut rdr = csv::Reader::from_reader(r);
    let num = |s: &str| if s.is_empty() { Ok(f64::NAN) } else { s.parse::<f64>() };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::Parse {
            line,
            msg: format!("bad {what}"),
        };
        out.push(TaskScore {
            method: rec[0].to_string(),
            seed: rec[1].parse().map_err(|_| bad("seed"))?,
            repeat: rec[2].parse().map_err(|_| bad("repeat"))?,
            region: rec[3].to_string(),
            attribute: rec[4].to_string(),
            n_query: rec[5].parse().map_err(|_| bad("n_query"))?,
            mse: num(&rec[6]).map_err(|_| bad("mse"))?,
            log_likelihood: num(&rec[7]).map_err(|_| bad("log_likelihood"))?,
            predict_ms: f64::NAN,
        });
    }
    Ok(out)
}

/// Aggregate table: mean ± standard error, p-value against the best method
/// and whether the method is best or tied with it.
pub fn write_summary_csv(summary: &[MethodSummary], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "method", "n", "mse_mean", "mse_se", "mse_p_vs_best", "mse_top", "ll_mean", "ll_se", "ll_p_vs_best", "ll_top",
    ])?;
    for s in summary {
        let p = |t: &Option<PairedTTest>| t.map(|t| t.p_value.to_string()).unwrap_or_default();
        out.write_record([
            s.method.clone(),
            s.n.to_string(),
            fmt_f(s.mse_mean),
            fmt_f(s.mse_se),
            p(&s.mse_vs_best),
            s.mse_top.to_string(),
            fmt_f(s.ll_mean),
            fmt_f(s.ll_se),
            p(&s.ll_vs_best),
            if s.ll_mean.is_finite() { s.ll_top.to_string() } else { String::new() },
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Convenience wrapper for a single model over matrices already in model
/// units; used by tests and the grid exporter.
pub fn predict_matrix<M: EpisodicModel<f64>>(
    model: &M,
    support: &SupportSet<f64>,
    query_x: &Matrix<f64>,
) -> Result<(Matrix<f64>, Option<Matrix<f64>>)> {
    let adapted = model.adapt(support)?;
    let m = adapted.as_ref().unwrap_or(model);
    let p = m.predict(&mut Eval, support, query_x, m.has_variance(), None)?;
    Ok((p.mean.into_matrix(), p.variance.map(|v| v.into_matrix())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use crate::model::{ModelKind, Prediction};
    use rand::RngCore;

    /// Constant mean with unit variance.
    #[derive(Clone)]
    struct Constant(f64);

    impl EpisodicModel<f64> for Constant {
        fn kind(&self) -> ModelKind {
            ModelKind::Nn
        }
        fn input_dim(&self) -> usize {
            2
        }
        fn has_variance(&self) -> bool {
            true
        }
        fn tensors(&self) -> Vec<&Matrix<f64>> {
            vec![]
        }
        fn tensors_mut(&mut self) -> Vec<&mut Matrix<f64>> {
            vec![]
        }
        fn predict<'p, G: Graph<'p, f64>>(
            &'p self,
            g: &mut G,
            _s: &SupportSet<f64>,
            q: &Matrix<f64>,
            _v: bool,
            _r: Option<&mut dyn RngCore>,
        ) -> Result<Prediction<G::Var>> {
            Ok(Prediction {
                mean: g.constant(Matrix::filled(q.rows(), 1, self.0))?,
                variance: Some(g.constant(Matrix::filled(q.rows(), 1, 1.0))?),
            })
        }
    }

    fn target() -> DatasetCollection {
        let mut col = DatasetCollection::new(0);
        for r in 0..3 {
            let x = Matrix::from_fn(30, 2, |i, j| ((i + 7 * j) % 11) as f64);
            let y = (0..30).map(|i| (i as f64 * 1.3 + r as f64).cos() * 5.0 + 2.0).collect();
            col.insert(TaskDataset::new(format!("r{r}"), "a", x, y).unwrap()).unwrap();
        }
        col
    }

    #[test]
    fn zero_predictor_scores_near_one_offline() {
        let cfg = EvalConfig {
            policy: NormPolicy::Offline,
            repeats: 3,
            ..EvalConfig::default()
        };
        let m = Constant(0.0);
        let scores = evaluate(&[("zero", &m)], &target(), &cfg).unwrap();
        assert_eq!(scores.len(), 9);
        let (mean, _) = mean_se(&scores.iter().map(|s| s.mse).collect::<Vec<_>>());
        assert!((mean - 1.0).abs() < 0.3, "{mean}");
    }

    #[test]
    fn summary_recomputes_from_raw_rows() {
        let cfg = EvalConfig {
            repeats: 4,
            ..EvalConfig::default()
        };
        let (a, b) = (Constant(0.0), Constant(0.5));
        let scores = evaluate(&[("a", &a), ("b", &b)], &target(), &cfg).unwrap();
        let mut buf = Vec::new();
        write_scores_csv(&scores, &mut buf).unwrap();
        let back = read_scores_csv(buf.as_slice()).unwrap();
        let s1 = summarize(&scores);
        let s2 = summarize(&back);
        for (x, y) in s1.iter().zip(&s2) {
            assert_eq!(x.mse_mean, y.mse_mean);
            assert_eq!(x.ll_mean, y.ll_mean);
            assert_eq!(x.mse_vs_best, y.mse_vs_best);
        }
        assert_eq!(s1.iter().filter(|s| s.mse_top && s.mse_vs_best.is_none()).count(), 1);
    }

    #[test]
    fn support_draw_is_disjoint_and_method_independent() {
        let col = target();
        let t = col.tasks().next().unwrap();
        let (s, q) = support_draw(t, 5, 1, 0, 2);
        assert_eq!(s.len() + q.len(), t.len());
        assert!(s.iter().all(|i| !q.contains(i)));
        assert_eq!(support_draw(t, 5, 1, 0, 2), (s, q));
    }
}
