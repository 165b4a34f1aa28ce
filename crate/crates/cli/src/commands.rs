//! The pipeline commands. Each returns the paths it wrote and reports
//! progress to `log`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use tcft_bed::data::{generate, load_raw, prepare, read_archive, write_archive, PreparedData, SyntheticConfig};
use tcft_bed::nn::{load_checkpoint, save_checkpoint, Model};
use tcft_bed::train::{
    evaluate_multi_window, run_ablation, train_multi_window, AblationSpec, Metrics, MetricsReport,
};

use crate::config::RunConfig;
use crate::manifest::{files_in, Manifest};

#[derive(Serialize)]
struct MetricsRow {
    sub_dataset: String,
    window_size: String,
    rmse: Option<f64>,
    score: Option<f64>,
    mae: Option<f64>,
    r2: Option<f64>,
    n: usize,
    params: usize,
    epoch_time_s: Option<f64>,
}

impl MetricsRow {
    fn new(sub: &str, window: String, m: Option<&Metrics>, n: usize, params: usize, time: Option<f64>) -> Self {
        MetricsRow {
            sub_dataset: sub.to_string(),
            window_size: window,
            rmse: m.map(|m| m.rmse),
            score: m.map(|m| m.score),
            mae: m.map(|m| m.mae),
            r2: m.map(|m| m.r_squared),
            n,
            params,
            epoch_time_s: time,
        }
    }
}

#[derive(Serialize)]
struct PredictionRow {
    sub_dataset: String,
    unit_id: u32,
    window_size: usize,
    end_cycle: u32,
    true_rul: f64,
    predicted_rul: f64,
}

#[derive(Serialize)]
struct AblationRow {
    variant: String,
    sub_dataset: String,
    rmse: f64,
    score: f64,
    mae: f64,
    r2: f64,
    n: usize,
    params: usize,
    epoch_time_s: f64,
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

#[derive(Serialize)]
struct TrainingRow {
    sub_dataset: String,
    window_size: usize,
    variant: String,
    params: usize,
    epochs: usize,
    final_loss: f64,
    epoch_time_s: f64,
}

#[derive(Serialize)]
struct AttentionRow {
    sub_dataset: String,
    unit_id: u32,
    window_size: usize,
    head: usize,
    key_step: usize,
    weight: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn load_dataset(config: &RunConfig) -> Result<(PreparedData, Vec<PathBuf>)> {
    let dir = config.dataset_dir();
    let data = read_archive(&dir).with_context(|| format!("loading dataset for {}", config.sub_dataset))?;
    if data.config.sub_dataset != config.sub_dataset {
        bail!(
            "dataset at {} holds {}, config asks for {}",
            dir.display(),
            data.config.sub_dataset,
            config.sub_dataset
        );
    }
    Ok((data, files_in(&dir)?))
}

fn load_models(config: &RunConfig, data: &PreparedData) -> Result<(Vec<Model>, Vec<PathBuf>)> {
    let mut models = Vec::new();
    let mut paths = Vec::new();
    for &w in &data.config.window_sizes {
        let path = config.checkpoint_path(w);
        if !path.is_file() {
            bail!("no checkpoint for window size {w} at {}; run `train` first", path.display());
        }
        let model = load_checkpoint(&path).with_context(|| format!("loading checkpoint for window size {w}"))?;
        if model.config().in_channels() != data.channels() {
            bail!(
                "checkpoint for window size {w} expects {} channels, dataset has {}",
                model.config().in_channels(),
                data.channels()
            );
        }
        models.push(model);
        paths.push(path);
    }
    Ok((models, paths))
}

/// Parses the raw files, selects sensors, segments windows and writes the
/// dataset archive.
pub fn cmd_prepare(config: &RunConfig, log: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let dir = config.require_data_dir()?;
    let sub = config.sub_dataset;
    let inputs: Vec<PathBuf> = [sub.train_file(), sub.test_file(), sub.rul_file()]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    let (train, test, ruls) = load_raw(dir, sub)?;
    let manifest = Manifest::begin(config, "prepare", &inputs)?;
    let data = prepare(&train, &test, &ruls, &config.prepare_config())?;
    let out = config.dataset_dir();
    write_archive(&out, &data)?;

    let sel = &data.selection;
    writeln!(
        log,
        "{sub}: {} train / {} test engines, {} of 21 sensors selected (tau_c {}, tau_m {})",
        train.len(),
        test.len(),
        sel.selected.len(),
        sel.tau_c,
        sel.tau_m
    )?;
    writeln!(log, "sensor        r       M  selected")?;
    for s in 0..sel.r.len() {
        let mark = if sel.selected.contains(&s) { "yes" } else { "no" };
        writeln!(log, "{:>6} {:>8.4} {:>7.4}  {mark}", s + 1, sel.r[s], sel.m[s])?;
    }
    writeln!(log, "window  train_samples  test_engines")?;
    for (k, w) in data.config.window_sizes.iter().enumerate() {
        writeln!(log, "{w:>6} {:>14} {:>13}", data.train[k].len(), data.test[k].len())?;
    }
    writeln!(log, "total test engines: {}", data.test_engine_count())?;

    let outputs = files_in(&out)?;
    manifest.complete(&outputs)?;
    Ok(outputs)
}

/// One model per window size; writes checkpoints, loss curves and a
/// training summary.
pub fn cmd_train(config: &RunConfig, log: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let (data, inputs) = load_dataset(config)?;
    let manifest = Manifest::begin(config, "train", &inputs)?;
    let channels = data.channels();
    let train = config.train_config();
    let variant = config.variant;
    let runs = train_multi_window(&data, &train, config.jobs, |w| {
        variant.model_config(channels, w, config.hidden, train.dropout)
    })?;
    fs::create_dir_all(config.checkpoint_dir())?;
    let sub = config.sub_dataset.to_string();
    let mut outputs = Vec::new();
    let mut summary = Vec::new();
    for run in &runs {
        let ckpt = config.checkpoint_path(run.window);
        save_checkpoint(&ckpt, &run.model)?;
        outputs.push(ckpt);
        let curve: Vec<LossRow> = run
            .outcome
            .losses
            .iter()
            .enumerate()
            .map(|(e, &loss)| LossRow { epoch: e + 1, loss })
            .collect();
        let path = config.out_dir.join(format!("loss_{sub}_w{}.csv", run.window));
        write_csv(&path, &curve)?;
        outputs.push(path);
        let final_loss = *run.outcome.losses.last().unwrap_or(&f64::NAN);
        writeln!(
            log,
            "w={:<4} params={:<7} final loss {final_loss:.4}  {:.2}s/epoch",
            run.window,
            run.model.num_params(),
            run.outcome.mean_epoch_seconds()
        )?;
        summary.push(TrainingRow {
            sub_dataset: sub.clone(),
            window_size: run.window,
            variant: variant.to_string(),
            params: run.model.num_params(),
            epochs: run.outcome.losses.len(),
            final_loss,
            epoch_time_s: run.outcome.mean_epoch_seconds(),
        });
    }
    let path = config.out_dir.join("training.csv");
    write_csv(&path, &summary)?;
    outputs.push(path);
    manifest.complete(&outputs)?;
    Ok(outputs)
}

fn metrics_rows(sub: &str, report: &MetricsReport, params: &[usize], times: Option<&[f64]>) -> Vec<MetricsRow> {
    let mut rows: Vec<MetricsRow> = report
        .per_size
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let n = s.metrics.map_or(0, |m| m.n);
            MetricsRow::new(sub, s.window.to_string(), s.metrics.as_ref(), n, params[k], times.map(|t| t[k]))
        })
        .collect();
    let c = &report.concatenated;
    let mean_time = times.map(|t| t.iter().sum::<f64>() / t.len() as f64);
    rows.push(MetricsRow::new(sub, "concat".into(), Some(c), c.n, params.iter().sum(), mean_time));
    rows
}

/// Scores the checkpoints on the test windows: `metrics.csv` and
/// `predictions.csv`.
pub fn cmd_evaluate(config: &RunConfig, log: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let (data, mut inputs) = load_dataset(config)?;
    let (models, ckpts) = load_models(config, &data)?;
    inputs.extend(ckpts);
    let manifest = Manifest::begin(config, "evaluate", &inputs)?;
    let refs: Vec<&Model> = models.iter().collect();
    let report = evaluate_multi_window(&refs, &data.test, config.score, Some(data.test_engine_count()))?;
    let sub = config.sub_dataset.to_string();
    let params: Vec<usize> = models.iter().map(|m| m.num_params()).collect();
    let rows = metrics_rows(&sub, &report, &params, None);
    for r in &rows {
        match r.rmse {
            Some(rmse) => writeln!(
                log,
                "{:<7} n={:<4} rmse {rmse:.3}  score {:.2}",
                r.window_size,
                r.n,
                r.score.unwrap_or(f64::NAN)
            )?,
            None => writeln!(log, "{:<7} n=0", r.window_size)?,
        }
    }
    let metrics = config.out_dir.join("metrics.csv");
    write_csv(&metrics, &rows)?;
    let preds: Vec<PredictionRow> = report
        .predictions
        .iter()
        .map(|p| PredictionRow {
            sub_dataset: sub.clone(),
            unit_id: p.unit_id,
            window_size: p.window,
            end_cycle: p.end_cycle,
            true_rul: p.true_rul,
            predicted_rul: p.predicted_rul,
        })
        .collect();
    let predictions = config.out_dir.join("predictions.csv");
    write_csv(&predictions, &preds)?;
    let outputs = vec![metrics, predictions];
    manifest.complete(&outputs)?;
    Ok(outputs)
}

/// Trains and scores every configured variant; one row each in
/// `ablation.csv`, written as soon as the variant finishes.
pub fn cmd_ablate(config: &RunConfig, log: &mut dyn Write) -> Result<Vec<PathBuf>> {
    if config.variants.is_empty() {
        bail!("no variants to run; set `variants` in the config");
    }
    let (data, inputs) = load_dataset(config)?;
    let manifest = Manifest::begin(config, "ablate", &inputs)?;
    let path = config.out_dir.join("ablation.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    for &variant in &config.variants {
        let spec = AblationSpec {
            variant,
            hidden: config.hidden,
            train: config.train_config(),
            convention: config.score,
        };
        let result = run_ablation(&spec, &data, config.jobs).with_context(|| format!("variant {variant}"))?;
        let c = &result.report.concatenated;
        writeln!(
            log,
            "{variant:<22} params={:<7} rmse {:.3}  score {:.2}  {:.2}s/epoch",
            result.params, c.rmse, c.score, result.mean_epoch_seconds
        )?;
        w.serialize(AblationRow {
            variant: variant.to_string(),
            sub_dataset: config.sub_dataset.to_string(),
            rmse: c.rmse,
            score: c.score,
            mae: c.mae,
            r2: c.r_squared,
            n: c.n,
            params: result.params,
            epoch_time_s: result.mean_epoch_seconds,
        })?;
        w.flush()?;
    }
    drop(w);
    manifest.complete(std::slice::from_ref(&path))?;
    Ok(vec![path])
}

/// Attention of the final step over every key step, per test engine and
/// head, from the trained checkpoints.
pub fn cmd_export(config: &RunConfig, log: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let (data, mut inputs) = load_dataset(config)?;
    let (models, ckpts) = load_models(config, &data)?;
    inputs.extend(ckpts);
    let manifest = Manifest::begin(config, "export", &inputs)?;
    let sub = config.sub_dataset.to_string();
    let mut rows = Vec::new();
    for (model, test) in models.iter().zip(&data.test) {
        if test.is_empty() {
            continue;
        }
        let indices: Vec<usize> = (0..test.len()).collect();
        let (x, _) = test.batch(&indices);
        let (_, weights) = model.predict_with_attention(&x)?;
        let Some(weights) = weights else {
            bail!("the {} checkpoint has no attention block to export", test.window);
        };
        let &[batch, heads, steps, _] = weights.shape() else {
            bail!("unexpected attention shape {:?}", weights.shape());
        };
        let v = weights.values();
        for b in 0..batch {
            for h in 0..heads {
                let row = ((b * heads + h) * steps + steps - 1) * steps;
                for k in 0..steps {
                    rows.push(AttentionRow {
                        sub_dataset: sub.clone(),
                        unit_id: test.unit_ids[b],
                        window_size: test.window,
                        head: h,
                        key_step: k,
                        weight: v[row + k],
                    });
                }
            }
        }
    }
    let path = config.out_dir.join("attention.csv");
    write_csv(&path, &rows)?;
    writeln!(log, "wrote {} attention weights to {}", rows.len(), path.display())?;
    manifest.complete(std::slice::from_ref(&path))?;
    Ok(vec![path])
}

/// Writes a seeded toy corpus in the raw C-MAPSS layout to the output
/// directory.
pub fn cmd_synth(config: &RunConfig, small: bool, log: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let manifest = Manifest::begin(config, "synth", &[])?;
    let synth = if small { SyntheticConfig::small() } else { SyntheticConfig::default() };
    let corpus = generate(&synth, config.seed);
    let sub = config.sub_dataset;
    tcft_bed::data::write_corpus(&config.out_dir, sub, &corpus)?;
    let outputs: Vec<PathBuf> = [sub.train_file(), sub.test_file(), sub.rul_file()]
        .iter()
        .map(|f| config.out_dir.join(f))
        .collect();
    writeln!(
        log,
        "wrote {} train and {} test engines for {sub} to {}",
        corpus.train.len(),
        corpus.test.len(),
        config.out_dir.display()
    )?;
    manifest.complete(&outputs)?;
    Ok(outputs)
}
