//! `fewshot-gp` experiment runner.
//!
//! Exit status: 0 on success, 1 for usage, configuration or data errors,
//! 2 when a run aborts on a numerical failure (Cholesky breakdown, NaN).

mod config;
mod manifest;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use fewshot_gp::baselines::AnyModel;
use fewshot_gp::checkpoint::{Checkpoint, NormalizationMeta};
use fewshot_gp::datasets::{load_csv, load_sidecar, save_csv, save_sidecar, NormPolicy};
use fewshot_gp::eval::{
    ablation_table, evaluate, predict_grid, summarize, sweep, sweep_table, write_grid_csv, write_scores_csv,
    write_summary_csv, AuxPlane, EvalConfig, GridSpec, Method,
};
use fewshot_gp::gp::MeanMode;
use fewshot_gp::model::{ModelKind, Objective};
use fewshot_gp::trainer::{build_model, train_model, Variant};
use fewshot_gp::{Error, Result};

use config::RunConfig;
use manifest::{dataset_hash, Manifest};

#[derive(Parser, Debug)]
#[command(name = "fewshot-gp", version, about = "Few-shot spatial regression experiments")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set train.max_episodes=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the dataset (synthetic or loaded) with its normalization sidecar.
    GenerateData {
        #[command(flatten)]
        common: Common,
    },
    /// Train one method and write its checkpoint and training log.
    Train {
        #[command(flatten)]
        common: Common,
        /// ours, gpr, np, nn, ft or an ablation variant name.
        #[arg(long, default_value = "ours")]
        method: String,
        /// Training seed; defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score trained checkpoints on the target tasks.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file; repeat to compare several methods.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Train and evaluate the configured methods along one axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// support_size, n_train_attributes or n_train_regions.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated axis values; defaults to `sweep.values`.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<usize>>,
    },
    /// Predict a regular lattice from a handful of observations.
    PredictGrid {
        /// Trained GP checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Observations in the dataset CSV schema.
        #[arg(long)]
        support: PathBuf,
        /// Normalization sidecar written by generate-data.
        #[arg(long)]
        norm: PathBuf,
        /// Region id of the task, as in the dataset.
        #[arg(long)]
        region: String,
        /// Attribute id of the task.
        #[arg(long)]
        attribute: String,
        /// Points per axis.
        #[arg(long, default_value_t = 32)]
        resolution: usize,
        /// x1_lo,x1_hi,x2_lo,x2_hi in normalized coordinates.
        #[arg(long, value_delimiter = ',', num_args = 4)]
        bbox: Option<Vec<f64>>,
        /// Dataset CSV whose locations for this task supply the auxiliary
        /// features (nearest location) and the default box.
        #[arg(long)]
        locations: Option<PathBuf>,
        /// Output CSV.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train and evaluate the ablation variants.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated variant names; defaults to `variants` in the config.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
    },
}

struct Prepared {
    cfg: RunConfig,
    toml: String,
    out: PathBuf,
}

fn prepare(common: &Common) -> Result<Prepared> {
    let cfg = RunConfig::load(common.config.as_deref(), &common.set)?;
    fs::create_dir_all(&common.out)?;
    let toml = cfg.to_toml()?;
    fs::write(common.out.join("config.toml"), &toml)?;
    Ok(Prepared {
        cfg,
        toml,
        out: common.out.clone(),
    })
}

fn manifest_for(command: &str, p: &Prepared) -> Result<Manifest> {
    let value = serde_json::to_value(&p.cfg)?;
    Ok(Manifest::new(command, &p.toml, value, p.cfg.seeds.clone()))
}

fn writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Table label of a checkpoint: the variant name for non-default GP
/// configurations, the model label otherwise.
fn checkpoint_label(ck: &Checkpoint) -> String {
    let c = &ck.config;
    if ck.model_kind == ModelKind::Gp {
        let variant = match (c.objective, c.mean_mode) {
            (Objective::LikeObj, MeanMode::Full) => Some(Variant::LikeObj),
            (Objective::MarLikeObj, MeanMode::Full) => Some(Variant::MarLikeObj),
            (Objective::ErrObj, MeanMode::NoSupportMean) => Some(Variant::NoSptMean),
            (Objective::ErrObj, MeanMode::ZeroMean) => Some(Variant::ZeroMean),
            _ => None,
        };
        if let Some(v) = variant {
            return v.name().to_string();
        }
    }
    ck.model_kind.label().to_string()
}

fn generate_data(common: &Common) -> Result<()> {
    let p = prepare(common)?;
    let mut m = manifest_for("generate-data", &p)?;
    let start = Instant::now();
    let raw = p.cfg.raw_collection()?;
    m.time("generate", start.elapsed().as_secs_f64() * 1e3);
    let data = p.out.join("data.csv");
    save_csv(&raw, &data)?;
    let norm = p.out.join("normalization.json");
    save_sidecar(&raw.normalize()?, &norm)?;
    m.dataset_sha256 = Some(dataset_hash(&raw)?);
    m.add_output(&data)?;
    m.add_output(&norm)?;
    let path = m.write(&p.out)?;
    println!("wrote {} tasks to {} ({})", raw.len(), data.display(), path.display());
    Ok(())
}

fn train(common: &Common, method: &str, seed: Option<u64>) -> Result<()> {
    let p = prepare(common)?;
    let method: Method = method.parse()?;
    let mut cfg = method.config(&p.cfg.train);
    cfg.seed = seed.unwrap_or(p.cfg.seeds[0]);
    let mut m = manifest_for("train", &p)?;
    m.seeds = vec![cfg.seed];

    let raw = p.cfg.raw_collection()?;
    m.dataset_sha256 = Some(dataset_hash(&raw)?);
    let data = p.cfg.experiment(&raw)?;
    let train_set = data.train.normalize()?;
    let validation = data.validation.normalize()?;
    let model = build_model(&cfg, train_set.input_dim())?;
    let outcome = train_model(&cfg, model, &train_set, &validation)?;
    m.time("train", outcome.elapsed_ms as f64);

    let log_path = p.out.join("train_log.csv");
    outcome.log.write_csv(writer(&log_path)?)?;
    let ck = Checkpoint::new(
        outcome.model,
        cfg,
        outcome.best_episode,
        outcome.best_val_loss,
        NormalizationMeta {
            training_policy: NormPolicy::Offline,
            records: train_set.records(),
        },
    );
    let ck_path = p.out.join("checkpoint.json");
    ck.save(&ck_path)?;
    m.add_output(&ck_path)?;
    m.add_output(&log_path)?;
    m.write(&p.out)?;
    println!(
        "{}: {} episodes, best validation loss {:.4} at episode {}",
        method, outcome.episodes_run, outcome.best_val_loss, outcome.best_episode
    );
    Ok(())
}

fn write_report(dir: &Path, m: &mut Manifest, scores: &[fewshot_gp::eval::TaskScore]) -> Result<()> {
    let scores_path = dir.join("scores.csv");
    write_scores_csv(scores, writer(&scores_path)?)?;
    let summary = summarize(scores);
    let summary_path = dir.join("summary.csv");
    write_summary_csv(&summary, writer(&summary_path)?)?;
    m.add_output(&scores_path)?;
    m.add_output(&summary_path)?;
    for s in &summary {
        println!(
            "{:<12} mse {:.4} ± {:.4}{}  ll {:.4} ± {:.4}",
            s.method,
            s.mse_mean,
            s.mse_se,
            if s.mse_top { " *" } else { "" },
            s.ll_mean,
            s.ll_se
        );
    }
    Ok(())
}

fn evaluate_cmd(common: &Common, checkpoints: &[PathBuf]) -> Result<()> {
    let p = prepare(common)?;
    let mut m = manifest_for("evaluate", &p)?;
    let mut models: Vec<(String, AnyModel<f64>)> = Vec::new();
    for path in checkpoints {
        let ck = Checkpoint::load(path)?;
        let mut label = checkpoint_label(&ck);
        let base = label.clone();
        let mut k = 2;
        while models.iter().any(|(l, _)| *l == label) {
            label = format!("{base}#{k}");
            k += 1;
        }
        models.push((label, ck.model));
    }
    let raw = p.cfg.raw_collection()?;
    m.dataset_sha256 = Some(dataset_hash(&raw)?);
    let data = p.cfg.experiment(&raw)?;
    let refs: Vec<(&str, &AnyModel<f64>)> = models.iter().map(|(l, m)| (l.as_str(), m)).collect();
    let start = Instant::now();
    let mut scores = Vec::new();
    for &seed in &p.cfg.seeds {
        scores.extend(evaluate(&refs, &data.target, &EvalConfig { seed, ..p.cfg.eval.clone() })?);
    }
    m.time("evaluate", start.elapsed().as_secs_f64() * 1e3);
    write_report(&p.out, &mut m, &scores)?;
    m.write(&p.out)?;
    Ok(())
}

fn sweep_cmd(common: &Common, axis: Option<&str>, values: Option<&[usize]>) -> Result<()> {
    let p = prepare(common)?;
    let mut m = manifest_for("sweep", &p)?;
    let axis = match axis {
        Some(a) => a.parse()?,
        None => p.cfg.sweep.axis,
    };
    let values = values.map_or_else(|| p.cfg.sweep.values.clone(), <[usize]>::to_vec);
    let raw = p.cfg.raw_collection()?;
    m.dataset_sha256 = Some(dataset_hash(&raw)?);
    let data = p.cfg.experiment(&raw)?;
    let start = Instant::now();
    let (rows, raw_scores) = sweep(axis, &values, &p.cfg.methods()?, &p.cfg.train, &data, &p.cfg.seeds, &p.cfg.eval)?;
    m.time("sweep", start.elapsed().as_secs_f64() * 1e3);
    let table = p.out.join("sweep.csv");
    sweep_table(axis, &rows, writer(&table)?)?;
    m.add_output(&table)?;
    for v in &values {
        let scores: Vec<_> = raw_scores.iter().filter(|(x, _)| x == v).map(|(_, s)| s.clone()).collect();
        let path = p.out.join(format!("scores_{axis}_{v}.csv"));
        write_scores_csv(&scores, writer(&path)?)?;
        m.add_output(&path)?;
    }
    for r in &rows {
        println!("{axis}={:<4} {:<12} mse {:.4} ± {:.4}", r.value, r.method, r.mse_mean, r.mse_se);
    }
    m.write(&p.out)?;
    Ok(())
}

fn ablate_cmd(common: &Common, variants: Option<&[String]>) -> Result<()> {
    let p = prepare(common)?;
    let mut m = manifest_for("ablate", &p)?;
    let variants: Vec<Variant> = match variants {
        Some(v) => v.iter().map(|s| s.parse()).collect::<Result<_>>()?,
        None => p.cfg.variants()?,
    };
    let raw = p.cfg.raw_collection()?;
    m.dataset_sha256 = Some(dataset_hash(&raw)?);
    let data = p.cfg.experiment(&raw)?;
    let start = Instant::now();
    let run = fewshot_gp::eval::ablate(&variants, &p.cfg.train, &data, &p.cfg.seeds, &p.cfg.eval)?;
    m.time("ablate", start.elapsed().as_secs_f64() * 1e3);
    let table = p.out.join("ablation.csv");
    ablation_table(&run.summary, writer(&table)?)?;
    m.add_output(&table)?;
    write_report(&p.out, &mut m, &run.scores)?;
    m.write(&p.out)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn predict_grid_cmd(
    checkpoint: &Path,
    support: &Path,
    norm: &Path,
    region: &str,
    attribute: &str,
    resolution: usize,
    bbox: Option<&[f64]>,
    locations: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let records = load_sidecar(norm)?;
    let record = records.get(region).and_then(|m| m.get(attribute));
    let obs = load_csv(support)?;
    let task = obs
        .get(region, attribute)
        .ok_or_else(|| Error::Data(format!("no observations for ({region}, {attribute}) in {}", support.display())))?;
    let aux_dim = obs.aux_dim();

    let located = match (locations, record) {
        (Some(path), Some(rec)) => {
            let col = load_csv(path)?;
            let t = col
                .get(region, attribute)
                .ok_or_else(|| Error::Data(format!("no locations for ({region}, {attribute}) in {}", path.display())))?;
            Some(rec.normalize_x(&t.x))
        }
        _ => None,
    };
    let bbox = match (bbox, &located) {
        (Some(b), _) => [b[0], b[1], b[2], b[3]],
        (None, Some(l)) => {
            let col = |j: usize| (0..l.rows()).map(move |i| l[(i, j)]);
            let lo = |j| col(j).fold(f64::INFINITY, f64::min);
            let hi = |j| col(j).fold(f64::NEG_INFINITY, f64::max);
            [lo(0), hi(0), lo(1), hi(1)]
        }
        (None, None) => [-2.0, 2.0, -2.0, 2.0],
    };
    let aux = match located {
        Some(l) => AuxPlane::Nearest(l),
        None => AuxPlane::Constant(vec![0.0; aux_dim]),
    };
    let spec = GridSpec {
        region: region.to_string(),
        attribute: attribute.to_string(),
        resolution: (resolution, resolution),
        bbox,
        aux,
    };
    let rows = predict_grid(&ck.model, &task.x, &task.y, record, &spec)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_grid_csv(&rows, writer(out)?)?;
    println!("wrote {} grid cells to {}", rows.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenerateData { common } => generate_data(common),
        Command::Train { common, method, seed } => train(common, method, *seed),
        Command::Evaluate { common, checkpoints } => evaluate_cmd(common, checkpoints),
        Command::Sweep { common, axis, values } => sweep_cmd(common, axis.as_deref(), values.as_deref()),
        Command::Ablate { common, variants } => ablate_cmd(common, variants.as_deref()),
        Command::PredictGrid {
            checkpoint,
            support,
            norm,
            region,
            attribute,
            resolution,
            bbox,
            locations,
            out,
        } => predict_grid_cmd(
            checkpoint,
            support,
            norm,
            region,
            attribute,
            *resolution,
            bbox.as_deref(),
            locations.as_deref(),
            out,
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

