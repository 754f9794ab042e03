//! Episodic meta-training: episode sampling, loss, Adam updates and
//! validation-based early stopping.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Eval, Graph, Tape};
use crate::baselines::{AnyModel, FineTune, GprModel, NnModel, NpModel};
use crate::datasets::{DatasetCollection, TaskDataset};
use crate::error::{Error, Result};
use crate::gp::{GpConfig, GpModel, MeanMode};
use crate::linalg::Matrix;
use crate::model::{episode_loss, mse, EpisodeData, EpisodicModel, ModelKind, Objective, SupportSet};
use crate::nn::{AdamConfig, AdamState};

/// Consecutive undersized tasks tolerated by [`sample_episode`].
pub const MAX_RESAMPLES: usize = 100;

/// One sampled (support, query) pair from one task.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub region: String,
    pub attribute: String,
    pub support_idx: Vec<usize>,
    pub query_idx: Vec<usize>,
    pub data: EpisodeData<f64>,
}

impl Episode {
    /// Episode over explicit, disjoint row indices of `task`.
    pub fn from_indices(task: &TaskDataset, support_idx: Vec<usize>, query_idx: Vec<usize>) -> Result<Self> {
        let (sx, sy) = task.rows(&support_idx);
        let (qx, qy) = task.rows(&query_idx);
        Ok(Self {
            region: task.region.clone(),
            attribute: task.attribute.clone(),
            data: EpisodeData::new(SupportSet::new(sx, sy)?, qx, qy)?,
            support_idx,
            query_idx,
        })
    }
}

/// Region, then attribute within it, then support and query rows without
/// replacement. Tasks with fewer than `n_s + n_q` rows are skipped; after
/// [`MAX_RESAMPLES`] consecutive skips the call fails.
pub fn sample_episode(col: &DatasetCollection, rng: &mut dyn RngCore, n_s: usize, n_q: usize) -> Result<Episode> {
    if col.is_empty() {
        return Err(Error::Data("cannot sample an episode from an empty collection".into()));
    }
    if n_s == 0 || n_q == 0 {
        return Err(Error::Config("support and query sizes must be at least 1".into()));
    }
    let regions = col.regions();
    for _ in 0..MAX_RESAMPLES {
        let region = &regions[rng.random_range(0..regions.len())];
        let attrs = col.attributes_of(region);
        let attribute = &attrs[rng.random_range(0..attrs.len())];
        let task = col.get(region, attribute).expect("listed task exists");
        if task.len() < n_s + n_q {
            continue;
        }
        let mut picked = index::sample(rng, task.len(), n_s + n_q).into_vec();
        let query = picked.split_off(n_s);
        return Episode::from_indices(task, picked, query);
    }
    Err(Error::Data(format!(
        "{MAX_RESAMPLES} consecutive sampled tasks had fewer than {} points",
        n_s + n_q
    )))
}

/// Width settings shared by every network of a model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub width: usize,
    pub hidden_layers: usize,
    /// Task-representation and kernel-embedding width.
    pub latent_dim: usize,
    pub dropout: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self::desk()
    }
}

impl Architecture {
    pub fn paper() -> Self {
        Self {
            width: 256,
            hidden_layers: 2,
            latent_dim: 256,
            dropout: 0.1,
        }
    }

    pub fn desk() -> Self {
        Self {
            width: 64,
            hidden_layers: 2,
            latent_dim: 32,
            dropout: 0.1,
        }
    }

    pub fn hidden(&self) -> Vec<usize> {
        vec![self.width; self.hidden_layers]
    }
}

/// Named model variants compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    ErrObj,
    LikeObj,
    MarLikeObj,
    NoSptMean,
    ZeroMean,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::ErrObj,
        Variant::LikeObj,
        Variant::MarLikeObj,
        Variant::NoSptMean,
        Variant::ZeroMean,
    ];

    pub fn objective(self) -> Objective {
        match self {
            Variant::LikeObj => Objective::LikeObj,
            Variant::MarLikeObj => Objective::MarLikeObj,
            _ => Objective::ErrObj,
        }
    }

    pub fn mean_mode(self) -> MeanMode {
        match self {
            Variant::NoSptMean => MeanMode::NoSupportMean,
            Variant::ZeroMean => MeanMode::ZeroMean,
            _ => MeanMode::Full,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::ErrObj => "ErrObj",
            Variant::LikeObj => "LikeObj",
            Variant::MarLikeObj => "MarLikeObj",
            Variant::NoSptMean => "NoSptMean",
            Variant::ZeroMean => "ZeroMean",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub objective: Objective,
    pub mean_mode: MeanMode,
    pub support_size: usize,
    pub query_size: usize,
    /// One episode is one gradient step.
    pub max_episodes: usize,
    pub validation_interval: usize,
    /// Validation checks without improvement tolerated before stopping.
    pub patience: usize,
    pub validation_episodes: usize,
    /// Episodes averaged per gradient step.
    pub batch: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub architecture: Architecture,
    /// Initial GPR hyperparameters (signal variance, length scale, noise variance).
    pub gpr_init: [f64; 3],
    pub ft_epochs: usize,
    pub ft_learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            model: ModelKind::Gp,
            objective: Objective::ErrObj,
            mean_mode: MeanMode::Full,
            support_size: 5,
            query_size: 64,
            max_episodes: 2000,
            validation_interval: 50,
            patience: 10,
            validation_episodes: 50,
            batch: 1,
            seed: 0,
            learning_rate: 1e-3,
            architecture: Architecture::desk(),
            gpr_init: [1.0, 0.5, 0.1],
            ft_epochs: 100,
            ft_learning_rate: 1e-3,
        }
    }

    pub fn paper() -> Self {
        Self {
            max_episodes: 5000,
            architecture: Architecture::paper(),
            ..Self::desk()
        }
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        self.model = ModelKind::Gp;
        self.objective = v.objective();
        self.mean_mode = v.mean_mode();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.support_size == 0 || self.query_size == 0 {
            return bad("support_size and query_size must be at least 1");
        }
        if self.validation_interval == 0 || self.batch == 0 || self.validation_episodes == 0 {
            return bad("validation_interval, validation_episodes and batch must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        let a = &self.architecture;
        if a.width == 0 || a.hidden_layers == 0 || a.latent_dim == 0 || !(0.0..1.0).contains(&a.dropout) {
            return bad("architecture needs positive sizes and dropout in [0, 1)");
        }
        if self.gpr_init.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("gpr_init values must be positive");
        }
        if self.mean_mode != MeanMode::Full && self.model != ModelKind::Gp {
            return bad("mean_mode applies only to the gp model");
        }
        if self.objective == Objective::MarLikeObj && !matches!(self.model, ModelKind::Gp | ModelKind::Gpr) {
            return bad("mar_like_obj needs a GP-based model");
        }
        Ok(())
    }

    /// Checks the episode sizes against the smallest task in `col`.
    pub fn check_against(&self, col: &DatasetCollection, what: &str) -> Result<()> {
        let need = self.support_size + self.query_size;
        if col.is_empty() {
            return Err(Error::Data(format!("{what} collection is empty")));
        }
        if col.min_task_len() < need {
            return Err(Error::Config(format!(
                "support_size + query_size = {need} exceeds the smallest {what} task ({} points)",
                col.min_task_len()
            )));
        }
        Ok(())
    }
}

/// Freshly initialized model described by `cfg` for `input_dim`-wide locations.
pub fn build_model(cfg: &TrainConfig, input_dim: usize) -> Result<AnyModel<f64>> {
    cfg.validate()?;
    let a = &cfg.architecture;
    let hidden = a.hidden();
    let variance_head = cfg.objective.needs_variance();
    Ok(match cfg.model {
        ModelKind::Gp => {
            let gc = GpConfig {
                dropout: a.dropout,
                mean_mode: cfg.mean_mode,
                ..GpConfig::new(input_dim, a.latent_dim, hidden)
            };
            AnyModel::Gp(GpModel::new(gc, cfg.seed)?)
        }
        ModelKind::Gpr => {
            let [s, l, n] = cfg.gpr_init;
            AnyModel::Gpr(GprModel::new(input_dim, s, l, n))
        }
        ModelKind::Np => AnyModel::Np(NpModel::new(input_dim, a.latent_dim, &hidden, a.dropout, variance_head, cfg.seed)?),
        ModelKind::Nn => AnyModel::Nn(NnModel::new(input_dim, &hidden, a.dropout, variance_head, cfg.seed)?),
        ModelKind::Ft => AnyModel::Nn(
            NnModel::new(input_dim, &hidden, a.dropout, variance_head, cfg.seed)?.with_fine_tune(FineTune {
                epochs: cfg.ft_epochs,
                lr: cfg.ft_learning_rate,
            }),
        ),
    })
}

fn abort(ep: &Episode, e: Error) -> Error {
    Error::TrainingAborted {
        region: ep.region.clone(),
        attribute: ep.attribute.clone(),
        source: Box::new(e),
    }
}

/// Mean validation loss under `objective` and mean query MSE.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationScore {
    pub loss: f64,
    pub mse: f64,
}

/// Loss of one episode in inference mode, plus its query MSE.
pub fn inference_loss<M: EpisodicModel<f64>>(model: &M, ep: &EpisodeData<f64>, objective: Objective) -> Result<(f64, f64)> {
    let mut g = Eval;
    let loss = episode_loss(model, &mut g, ep, objective, None)?.into_matrix().item();
    let err = if objective == Objective::ErrObj {
        loss
    } else {
        let pred = model.predict(&mut g, &ep.support, &ep.query_x, false, None)?;
        let y = g.constant(ep.query_y.clone())?;
        mse(&mut g, &pred.mean, &y)?.into_matrix().item()
    };
    Ok((loss, err))
}

/// Mean loss over `n_episodes` freshly sampled episodes, dropout off.
pub fn validate<M: EpisodicModel<f64>>(
    model: &M,
    col: &DatasetCollection,
    n_episodes: usize,
    n_s: usize,
    n_q: usize,
    objective: Objective,
    rng: &mut dyn RngCore,
) -> Result<ValidationScore> {
    if n_episodes == 0 {
        return Err(Error::Config("validation needs at least one episode".into()));
    }
    let (mut loss, mut err) = (0.0, 0.0);
    for _ in 0..n_episodes {
        let ep = sample_episode(col, rng, n_s, n_q)?;
        let (l, e) = inference_loss(model, &ep.data, objective).map_err(|e| abort(&ep, e))?;
        loss += l;
        err += e;
    }
    let n = n_episodes as f64;
    Ok(ValidationScore {
        loss: loss / n,
        mse: err / n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub episode: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_mse: Option<f64>,
    pub wall_clock_ms: u128,
}

/// Per-episode training log.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub const HEADER: [&'static str; 4] = ["episode", "train_loss", "val_loss", "wall_clock_ms"];

    /// CSV with an empty `val_loss` on episodes without a validation check.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        self.write_rows(w, true)
    }

    /// Same table without the timing column, for bitwise comparisons.
    pub fn write_csv_untimed(&self, w: impl Write) -> Result<()> {
        self.write_rows(w, false)
    }

    fn write_rows(&self, w: impl Write, timed: bool) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let cols = if timed { 4 } else { 3 };
        out.write_record(&Self::HEADER[..cols])?;
        for r in &self.rows {
            let mut rec = vec![
                r.episode.to_string(),
                r.train_loss.to_string(),
                r.val_loss.map(|v| v.to_string()).unwrap_or_default(),
            ];
            if timed {
                rec.push(r.wall_clock_ms.to_string());
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn validations(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.rows
            .iter()
            .filter_map(|r| Some((r.episode, r.val_loss?, r.val_mse?)))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Snapshot with the best validation loss.
    pub model: AnyModel<f64>,
    pub log: TrainLog,
    pub best_episode: usize,
    pub best_val_loss: f64,
    pub episodes_run: usize,
    pub stopped_early: bool,
    pub elapsed_ms: u128,
}

fn derived_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt
}

/// Trains a model built from `cfg` on episodes of `train_set`, checking
/// `validation` every `validation_interval` episodes and after the last one.
/// Collections are normalized offline first if they are still raw.
pub fn train(cfg: &TrainConfig, train_set: &DatasetCollection, validation: &DatasetCollection) -> Result<TrainOutcome> {
    let model = build_model(cfg, train_set.input_dim())?;
    train_model(cfg, model, train_set, validation)
}

/// [`train`] starting from an existing model.
pub fn train_model(
    cfg: &TrainConfig,
    mut model: AnyModel<f64>,
    train_set: &DatasetCollection,
    validation: &DatasetCollection,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    cfg.check_against(train_set, "training")?;
    cfg.check_against(validation, "validation")?;
    if validation.input_dim() != train_set.input_dim() || model.input_dim() != train_set.input_dim() {
        return Err(Error::Data("training, validation and model input widths differ".into()));
    }
    let train_set = train_set.ensure_normalized()?;
    let validation = validation.ensure_normalized()?;

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(cfg.seed, 1));
    let mut val_rng = ChaCha8Rng::seed_from_u64(derived_seed(cfg.seed, 2));
    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        },
        &model.tensors(),
    );

    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, AnyModel<f64>)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut episodes_run = 0;
    let scale = 1.0 / cfg.batch as f64;

    for episode in 1..=cfg.max_episodes {
        let mut grads: Option<Vec<Matrix<f64>>> = None;
        let mut train_loss = 0.0;
        let mut last = None;
        for _ in 0..cfg.batch {
            let ep = sample_episode(&train_set, &mut rng, cfg.support_size, cfg.query_size)?;
            let (loss, g) = {
                let mut tape = Tape::new();
                let loss = episode_loss(&model, &mut tape, &ep.data, cfg.objective, Some(&mut rng))
                    .map_err(|e| abort(&ep, e))?;
                let value = tape.value(&loss).item();
                if !value.is_finite() {
                    return Err(abort(&ep, Error::NonFinite { op: "episode_loss" }));
                }
                let g = tape.backward(loss).map_err(|e| abort(&ep, e))?.params(&model.tensors());
                (value, g)
            };
            train_loss += loss * scale;
            grads = Some(match grads {
                None => g.into_iter().map(|m| m.scale(scale)).collect(),
                Some(mut acc) => {
                    for (a, m) in acc.iter_mut().zip(&g) {
                        a.add_assign(&m.scale(scale));
                    }
                    acc
                }
            });
            last = Some(ep);
        }
        let ep = last.expect("batch >= 1");
        adam.step(&mut model.tensors_mut(), &grads.expect("batch >= 1"))
            .map_err(|e| abort(&ep, e))?;
        episodes_run = episode;

        let check = episode % cfg.validation_interval == 0 || episode == cfg.max_episodes;
        let mut row = LogRow {
            episode,
            train_loss,
            val_loss: None,
            val_mse: None,
            wall_clock_ms: 0,
        };
        if check {
            let score = validate(
                &model,
                &validation,
                cfg.validation_episodes,
                cfg.support_size,
                cfg.query_size,
                cfg.objective,
                &mut val_rng,
            )?;
            row.val_loss = Some(score.loss);
            row.val_mse = Some(score.mse);
            if best.as_ref().is_none_or(|(b, _, _)| score.loss < *b) {
                best = Some((score.loss, episode, model.clone()));
                since_best = 0;
            } else {
                since_best += 1;
            }
        }
        row.wall_clock_ms = start.elapsed().as_millis();
        log.rows.push(row);
        if check && since_best > cfg.patience {
            stopped_early = true;
            break;
        }
    }

    let (best_val_loss, best_episode, model) = match best {
        Some(b) => b,
        None => {
            // zero episodes: score the initial model
            let score = validate(
                &model,
                &validation,
                cfg.validation_episodes,
                cfg.support_size,
                cfg.query_size,
                cfg.objective,
                &mut val_rng,
            )?;
            (score.loss, 0, model)
        }
    };
    log::info!(
        "trained {} for {episodes_run} episodes; best validation loss {best_val_loss:.4} at episode {best_episode}",
        model.kind().label()
    );
    Ok(TrainOutcome {
        model,
        log,
        best_episode,
        best_val_loss,
        episodes_run,
        stopped_early,
        elapsed_ms: start.elapsed().as_millis(),
    })
}
