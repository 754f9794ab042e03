mod common;

use common::*;
use fewshot_gp::autodiff::Eval;
use fewshot_gp::baselines::{AnyModel, NnModel};
use fewshot_gp::checkpoint::{Checkpoint, NormalizationMeta};
use fewshot_gp::datasets::{generate_synthetic, DatasetCollection, NormPolicy, NormalizationRecord, SplitCounts, SyntheticConfig, TaskDataset};
use fewshot_gp::eval::{evaluate, predict_grid, summarize, AuxPlane, EvalConfig, ExperimentData, GridSpec};
use fewshot_gp::gp::MeanMode;
use fewshot_gp::model::{episode_loss, EpisodeData, EpisodicModel, ModelKind, Objective};
use fewshot_gp::trainer::{inference_loss, sample_episode, train, validate, Architecture, TrainConfig};
use fewshot_gp::Matrix64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_data() -> ExperimentData {
    let cfg = SyntheticConfig {
        regions: 10,
        attributes: 3,
        grid: 8,
        ..SyntheticConfig::default()
    };
    let c = |t, v, g| SplitCounts { train: t, validation: v, target: g };
    ExperimentData::synthetic(&cfg, c(6, 2, 2), c(1, 1, 1), 0).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        query_size: 32,
        max_episodes: 300,
        validation_interval: 25,
        validation_episodes: 20,
        architecture: Architecture {
            width: 32,
            hidden_layers: 2,
            latent_dim: 16,
            dropout: 0.1,
        },
        ..TrainConfig::desk()
    }
}

#[test]
fn training_reduces_the_loss() {
    let data = small_data();
    let cfg = TrainConfig {
        max_episodes: 500,
        patience: 100,
        ..small_config()
    };
    let out = train(&cfg, &data.train, &data.validation).unwrap();
    assert_eq!(out.episodes_run, 500);
    let window = |r: std::ops::Range<usize>| out.log.rows[r.clone()].iter().map(|x| x.train_loss).sum::<f64>() / r.len() as f64;
    let (early, late) = (window(0..50), window(450..500));
    assert!(late < 0.8 * early, "train loss {early} -> {late}");
    let vals: Vec<f64> = out.log.validations().map(|(_, l, _)| l).collect();
    assert!(out.best_val_loss < vals[0]);
}

#[test]
fn zero_patience_stops_at_the_first_regression() {
    let data = small_data();
    let cfg = TrainConfig {
        max_episodes: 2000,
        validation_interval: 10,
        patience: 0,
        ..small_config()
    };
    let out = train(&cfg, &data.train, &data.validation).unwrap();
    assert!(out.stopped_early);
    let vals: Vec<(usize, f64, f64)> = out.log.validations().collect();
    let (last, prev) = (vals[vals.len() - 1], vals[vals.len() - 2]);
    assert!(last.1 >= out.best_val_loss && last.0 == out.episodes_run);
    assert_eq!(prev.0, out.best_episode);
    for w in vals[..vals.len() - 1].windows(2) {
        assert!(w[1].1 < w[0].1);
    }
}

#[test]
fn validation_score_is_the_mean_over_fresh_episodes() {
    let data = small_data();
    let val = data.validation.normalize().unwrap();
    let m = random_gp(3, 8, 16, 3);
    for obj in [Objective::ErrObj, Objective::LikeObj, Objective::MarLikeObj] {
        let score = validate(&m, &val, 7, 5, 16, obj, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let (mut l, mut e) = (0.0, 0.0);
        for _ in 0..7 {
            let ep = sample_episode(&val, &mut r, 5, 16).unwrap();
            let (a, b) = inference_loss(&m, &ep.data, obj).unwrap();
            l += a;
            e += b;
        }
        assert!((score.loss - l / 7.0).abs() < 1e-12);
        assert!((score.mse - e / 7.0).abs() < 1e-12);
    }
}

#[test]
fn marginal_objective_ignores_the_queries() {
    let m = random_gp(3, 8, 16, 5);
    let mut r = rng(51);
    let s = random_support(&mut r, 5, 3);
    let q = uniform_matrix(&mut r, 8, 3, -2.0, 2.0);
    let a = EpisodeData::new(s.clone(), q.clone(), uniform_matrix(&mut r, 8, 1, -2.0, 2.0)).unwrap();
    let b = EpisodeData::new(s, uniform_matrix(&mut r, 3, 3, -9.0, 9.0), uniform_matrix(&mut r, 3, 1, -9.0, 9.0)).unwrap();
    let la = episode_loss(&m, &mut Eval, &a, Objective::MarLikeObj, None).unwrap().into_matrix().item();
    let lb = episode_loss(&m, &mut Eval, &b, Objective::MarLikeObj, None).unwrap().into_matrix().item();
    assert_eq!(la, lb);
    let ea = episode_loss(&m, &mut Eval, &a, Objective::ErrObj, None).unwrap().into_matrix().item();
    let eb = episode_loss(&m, &mut Eval, &b, Objective::ErrObj, None).unwrap().into_matrix().item();
    assert_ne!(ea, eb);
}

#[test]
fn exact_predictor_scores_zero() {
    // constant tasks normalize to zero, which an all-zero network predicts exactly
    let mut target = DatasetCollection::new(1);
    for r in 0..3 {
        let x = Matrix64::from_fn(20, 3, |i, j| (i * 3 + j) as f64 * 0.1 + r as f64);
        target.insert(TaskDataset::new(format!("r{r}"), "a0", x, vec![4.0 + r as f64; 20]).unwrap()).unwrap();
    }
    let mut nn = NnModel::<f64>::new(3, &[8, 8], 0.0, true, 0).unwrap();
    for t in nn.net_mut().tensors_mut() {
        *t = Matrix64::zeros(t.rows(), t.cols());
    }
    for policy in [NormPolicy::Offline, NormPolicy::SupportOnly] {
        let cfg = EvalConfig { policy, repeats: 3, ..EvalConfig::default() };
        let scores = evaluate(&[("zero", &nn)], &target, &cfg).unwrap();
        assert_eq!(scores.len(), 9);
        assert!(scores.iter().all(|s| s.mse == 0.0));
        assert_eq!(summarize(&scores)[0].mse_mean, 0.0);
    }
}

#[test]
fn grid_reproduces_support_observations() {
    let col = generate_synthetic(&SyntheticConfig {
        regions: 1,
        attributes: 1,
        grid: 9,
        noise_std: fewshot_gp::datasets::Range::point(0.0),
        ..SyntheticConfig::default()
    })
    .unwrap();
    let task = col.tasks().next().unwrap().clone();
    let rec = NormalizationRecord::offline(&task);
    let idx = [0usize, 13, 40, 71, 80];
    let (sx, sy) = task.rows(&idx);
    let m = structured_gp(3, 8, 16, 2.0, 0.05, MeanMode::Full, 9);
    let norm_locs = rec.normalize_x(&task.x);
    let lo = |j: usize| norm_locs.as_slice().chunks(3).map(|r| r[j]).fold(f64::MAX, f64::min);
    let hi = |j: usize| norm_locs.as_slice().chunks(3).map(|r| r[j]).fold(f64::MIN, f64::max);
    let spec = GridSpec {
        region: task.region.clone(),
        attribute: task.attribute.clone(),
        resolution: (9, 9),
        bbox: [lo(0), hi(0), lo(1), hi(1)],
        aux: AuxPlane::Nearest(norm_locs.clone()),
    };
    let model = AnyModel::Gp(m);
    let rows = predict_grid(&model, &sx, sy.as_slice(), Some(&rec), &spec).unwrap();
    assert_eq!(rows.len(), 81);
    let flagged: Vec<_> = rows.iter().filter(|r| r.is_support).collect();
    assert_eq!(flagged.len(), idx.len());
    for r in &flagged {
        let k = (0..idx.len())
            .find(|&k| (sx[(k, 0)] - r.x1).abs() < 1e-9 && (sx[(k, 1)] - r.x2).abs() < 1e-9)
            .expect("support cell");
        assert!((r.mean - sy[(k, 0)]).abs() <= 1e-9, "{} vs {}", r.mean, sy[(k, 0)]);
        assert!(r.variance.abs() <= 1e-9);
    }
    for r in rows.iter().filter(|r| !r.is_support) {
        assert!(r.variance > 0.0 && r.mean.is_finite());
    }
    assert!(predict_grid(&model, &sx, sy.as_slice(), None, &spec).is_err());
}

#[test]
fn checkpoint_reload_predicts_identically() {
    let data = small_data();
    let cfg = TrainConfig {
        max_episodes: 60,
        ..small_config()
    };
    let out = train(&cfg, &data.train, &data.validation).unwrap();
    let meta = NormalizationMeta {
        training_policy: NormPolicy::Offline,
        records: data.train.normalize().unwrap().records(),
    };
    let ck = Checkpoint::new(out.model.clone(), cfg, out.best_episode, out.best_val_loss, meta);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.json");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.model_kind, ModelKind::Gp);
    let eval = EvalConfig { repeats: 2, ..EvalConfig::default() };
    let a = evaluate(&[("m", &out.model)], &data.target, &eval).unwrap();
    let b = evaluate(&[("m", &back.model)], &data.target, &eval).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.mse.to_bits(), y.mse.to_bits());
        assert_eq!(x.log_likelihood.to_bits(), y.log_likelihood.to_bits());
    }
    assert!(out.model.has_variance());
}
