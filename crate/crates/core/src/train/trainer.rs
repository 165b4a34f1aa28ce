//! Training loop, multi-window orchestration and evaluation.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::init::xavier_uniform_init;
use super::metrics::{mse_loss, Metrics, ScoreConvention};
use super::optim::{adam_step, AdamConfig, AdamState};
use crate::data::{PreparedData, WindowDataset};
use crate::error::{Error, Result};
use crate::nn::{Model, ModelConfig};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            epochs: 100,
            batch_size: 64,
            seed: 0,
            dropout: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::config("learning_rate must be positive and weight_decay non-negative"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Per-epoch record of one training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainOutcome {
    /// Sample-weighted mean training MSE of each epoch.
    pub losses: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

impl TrainOutcome {
    pub fn mean_epoch_seconds(&self) -> f64 {
        if self.epoch_seconds.is_empty() {
            return 0.0;
        }
        self.epoch_seconds.iter().sum::<f64>() / self.epoch_seconds.len() as f64
    }
}

/// Mixes a window size into a base seed so each size gets its own stream.
pub fn derive_seed(seed: u64, window: usize) -> u64 {
    let mut z = seed ^ (window as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mini-batch Adam on MSE for `config.epochs` epochs, shuffling every epoch.
/// Dropout and shuffling draw from one generator seeded by `config.seed`.
pub fn train_one_window(model: &mut Model, data: &WindowDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Data(format!("no training windows of length {}", data.window)));
    }
    if data.channels != model.config().in_channels() {
        return Err(Error::dim("train_one_window channels", &[data.channels], &[model.config().in_channels()]));
    }
    let adam = config.adam();
    let mut state = AdamState::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut outcome = TrainOutcome::default();
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            let (x, y) = data.batch(batch);
            let mut tape = Tape::new();
            tape.set_retain_grads(false);
            let vars = model.params().bind(&mut tape);
            let xv = tape.constant(x);
            let yv = tape.constant(Tensor::vector(y));
            let out = model.forward(&mut tape, &vars, xv, Some(&mut rng))?;
            let loss = mse_loss(&mut tape, out.prediction, yv)?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                    param_norm: model.params().l2_norm(),
                });
            }
            total += value * batch.len() as f64;
            tape.backward(loss)?;
            let params = model.params_mut();
            params.zero_grads();
            params.accumulate_grads(&tape, &vars)?;
            step += 1;
            adam_step(params, &mut state, step, &adam)?;
        }
        outcome.losses.push(total / data.len() as f64);
        outcome.epoch_seconds.push(start.elapsed().as_secs_f64());
    }
    Ok(outcome)
}

/// Predictions for every sample, computed in fixed-size chunks.
pub fn predict_dataset(model: &Model, data: &WindowDataset) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(256) {
        let (x, _) = data.batch(chunk);
        out.extend(model.predict(&x)?);
    }
    Ok(out)
}

/// A model trained on one window size.
#[derive(Clone, Debug)]
pub struct WindowRun {
    pub window: usize,
    pub model: Model,
    pub outcome: TrainOutcome,
}

/// Builds, initialises and trains one model per window size of `data`,
/// running at most `jobs` sizes at once. `build` maps a window length to the
/// model configuration; size `w` is seeded with `derive_seed(config.seed, w)`.
pub fn train_multi_window<F>(data: &PreparedData, config: &TrainConfig, jobs: usize, build: F) -> Result<Vec<WindowRun>>
where
    F: Fn(usize) -> Result<ModelConfig> + Sync,
{
    config.validate()?;
    let run = |i: usize| -> Result<WindowRun> {
        let window = data.config.window_sizes[i];
        let seed = derive_seed(config.seed, window);
        let mut model = Model::new(build(window)?)?;
        xavier_uniform_init(&mut model, seed);
        let cfg = TrainConfig { seed, ..config.clone() };
        let outcome = train_one_window(&mut model, &data.train[i], &cfg)?;
        Ok(WindowRun { window, model, outcome })
    };
    let n = data.config.window_sizes.len();
    let jobs = jobs.clamp(1, n.max(1));
    let mut results: Vec<Option<Result<WindowRun>>> = (0..n).map(|_| None).collect();
    let indices: Vec<usize> = (0..n).collect();
    for group in indices.chunks(jobs) {
        std::thread::scope(|s| {
            let handles: Vec<_> = group.iter().map(|&i| (i, s.spawn(move || run(i)))).collect();
            for (i, h) in handles {
                results[i] = Some(h.join().unwrap_or_else(|_| Err(Error::contract("training thread panicked"))));
            }
        });
    }
    results.into_iter().map(|r| r.expect("every size ran")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnginePrediction {
    pub unit_id: u32,
    pub window: usize,
    pub end_cycle: u32,
    pub true_rul: f64,
    pub predicted_rul: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeMetrics {
    pub window: usize,
    /// `None` when no test engine fell into this size.
    pub metrics: Option<Metrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_size: Vec<SizeMetrics>,
    pub concatenated: Metrics,
    pub predictions: Vec<EnginePrediction>,
    pub convention: ScoreConvention,
}

/// Scores per-size predictions and their union. Every test engine must
/// appear exactly once across sizes; `expected_engines`, when given, must
/// equal the number of engines seen.
pub fn report_from_predictions(
    per_size: &[(usize, Vec<EnginePrediction>)],
    convention: ScoreConvention,
    expected_engines: Option<usize>,
) -> Result<MetricsReport> {
    let mut seen: HashMap<u32, usize> = HashMap::new();
    for (w, preds) in per_size {
        for p in preds {
            if let Some(other) = seen.insert(p.unit_id, *w) {
                return Err(Error::Coverage(format!(
                    "unit {} appears in window sizes {other} and {w}",
                    p.unit_id
                )));
            }
        }
    }
    if let Some(expected) = expected_engines {
        if seen.len() != expected {
            return Err(Error::Coverage(format!(
                "{} test engines scored, expected {expected}",
                seen.len()
            )));
        }
    }
    let split = |preds: &[EnginePrediction]| -> (Vec<f64>, Vec<f64>) {
        preds.iter().map(|p| (p.predicted_rul, p.true_rul)).unzip()
    };
    let mut sizes = Vec::new();
    let mut all = Vec::new();
    for (w, preds) in per_size {
        let metrics = if preds.is_empty() {
            None
        } else {
            let (p, y) = split(preds);
            Some(Metrics::compute(&p, &y, convention)?)
        };
        sizes.push(SizeMetrics { window: *w, metrics });
        all.extend(preds.iter().cloned());
    }
    let (p, y) = split(&all);
    let concatenated = Metrics::compute(&p, &y, convention)?;
    Ok(MetricsReport {
        per_size: sizes,
        concatenated,
        predictions: all,
        convention,
    })
}

/// Runs each size's model on that size's test windows and scores the lot.
pub fn evaluate_multi_window(
    models: &[&Model],
    tests: &[WindowDataset],
    convention: ScoreConvention,
    expected_engines: Option<usize>,
) -> Result<MetricsReport> {
    if models.len() != tests.len() {
        return Err(Error::contract(format!(
            "{} models for {} test sets",
            models.len(),
            tests.len()
        )));
    }
    let mut per_size = Vec::with_capacity(tests.len());
    for (model, data) in models.iter().zip(tests) {
        let predicted = predict_dataset(model, data)?;
        let preds = (0..data.len())
            .map(|i| EnginePrediction {
                unit_id: data.unit_ids[i],
                window: data.window,
                end_cycle: data.end_cycles[i],
                true_rul: data.labels[i],
                predicted_rul: predicted[i],
            })
            .collect();
        per_size.push((data.window, preds));
    }
    report_from_predictions(&per_size, convention, expected_engines)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, prepare, PrepareConfig, SubDataset, SyntheticConfig};
    use crate::nn::TcftBedConfig;

    fn toy() -> PreparedData {
        let corpus = generate(&SyntheticConfig::small(), 11);
        let mut cfg = PrepareConfig::new(SubDataset::FD001);
        cfg.window_sizes = vec![8, 16];
        prepare(&corpus.train, &corpus.test, &corpus.rul, &cfg).unwrap()
    }

    fn tiny(channels: usize) -> ModelConfig {
        tiny_with_dropout(channels, 0.2)
    }

    fn tiny_with_dropout(channels: usize, dropout: f64) -> ModelConfig {
        let mut c = TcftBedConfig::scaled(channels, 4);
        c.tcn.as_mut().unwrap().dilations = vec![1, 2];
        c.dropout = dropout;
        c.attention.dropout = dropout;
        ModelConfig::TcftBed(c)
    }

    fn pred(unit: u32, w: usize, y: f64, p: f64) -> EnginePrediction {
        EnginePrediction { unit_id: unit, window: w, end_cycle: 50, true_rul: y, predicted_rul: p }
    }

    #[test]
    fn one_epoch_on_one_sample_reduces_its_error() {
        let data = toy();
        let mut one = WindowDataset::new(data.train[0].window, data.train[0].channels);
        one.features = data.train[0].sample(0).to_vec();
        one.labels = vec![50.0];
        one.unit_ids = vec![1];
        one.end_cycles = vec![8];
        let mut model = Model::new(tiny(data.channels())).unwrap();
        xavier_uniform_init(&mut model, 1);
        let err = |m: &Model| (predict_dataset(m, &one).unwrap()[0] - 50.0).powi(2);
        let before = err(&model);
        let cfg = TrainConfig { epochs: 1, dropout: 0.0, ..TrainConfig::default() };
        let out = train_one_window(&mut model, &one, &cfg).unwrap();
        assert_eq!(out.losses.len(), 1);
        assert!(err(&model) < before);
    }

    #[test]
    fn single_sample_can_be_fitted() {
        let data = toy();
        let mut one = WindowDataset::new(data.train[0].window, data.train[0].channels);
        one.features = data.train[0].sample(3).to_vec();
        one.labels = vec![12.0];
        one.unit_ids = vec![1];
        one.end_cycles = vec![11];
        let mut model = Model::new(tiny_with_dropout(data.channels(), 0.0)).unwrap();
        xavier_uniform_init(&mut model, 2);
        let cfg = TrainConfig { epochs: 400, learning_rate: 1e-2, dropout: 0.0, ..TrainConfig::default() };
        train_one_window(&mut model, &one, &cfg).unwrap();
        let p = predict_dataset(&model, &one).unwrap()[0];
        assert!((p - 12.0).abs() < 1.0, "{p}");
    }

    #[test]
    fn identical_seeds_give_identical_models() {
        let data = toy();
        let cfg = TrainConfig { epochs: 2, batch_size: 16, seed: 5, ..TrainConfig::default() };
        let build = |_w: usize| Ok(tiny(data.channels()));
        let a = train_multi_window(&data, &cfg, 2, build).unwrap();
        let b = train_multi_window(&data, &cfg, 1, build).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.outcome.losses, y.outcome.losses);
            assert_eq!(x.outcome.losses.len(), 2);
            for (p, q) in x.model.params().iter().zip(y.model.params().iter()) {
                assert_eq!(p.tensor.values(), q.tensor.values(), "{}", p.name);
            }
        }
        let models: Vec<&Model> = a.iter().map(|r| &r.model).collect();
        let report = evaluate_multi_window(&models, &data.test, ScoreConvention::Standard, Some(5)).unwrap();
        assert_eq!(report.concatenated.n, 5);
        assert_eq!(report.predictions.len(), 5);
    }

    #[test]
    fn non_finite_loss_aborts_with_context() {
        let data = toy();
        let mut model = Model::new(tiny(data.channels())).unwrap();
        xavier_uniform_init(&mut model, 1);
        let mut bad = data.train[0].clone();
        bad.labels[0] = f64::NAN;
        let cfg = TrainConfig { epochs: 1, batch_size: 1000, ..TrainConfig::default() };
        match train_one_window(&mut model, &bad, &cfg) {
            Err(Error::NonFiniteLoss { epoch: 0, batch: 0, param_norm }) => assert!(param_norm > 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn perfect_predictions_score_zero() {
        let per_size = vec![(31, vec![pred(1, 31, 10.0, 10.0)]), (125, vec![pred(2, 125, 90.0, 90.0)])];
        let r = report_from_predictions(&per_size, ScoreConvention::Standard, Some(2)).unwrap();
        assert_eq!((r.concatenated.rmse, r.concatenated.score), (0.0, 0.0));
    }

    #[test]
    fn pooled_rmse_matches_the_union() {
        let per_size = vec![
            (31, vec![pred(1, 31, 10.0, 13.0), pred(2, 31, 10.0, 6.0)]),
            (60, vec![]),
            (125, vec![pred(3, 125, 80.0, 81.0)]),
        ];
        let r = report_from_predictions(&per_size, ScoreConvention::Standard, None).unwrap();
        assert!((r.concatenated.rmse - (26.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(r.per_size[1].metrics, None);
        let sum: f64 = r.per_size.iter().filter_map(|s| s.metrics).map(|m| m.score).sum();
        assert!((sum - r.concatenated.score).abs() < 1e-12);
    }

    #[test]
    fn coverage_errors() {
        let twice = vec![(31, vec![pred(1, 31, 1.0, 1.0)]), (60, vec![pred(1, 60, 1.0, 1.0)])];
        assert!(matches!(
            report_from_predictions(&twice, ScoreConvention::Standard, None),
            Err(Error::Coverage(_))
        ));
        let missing = vec![(31, vec![pred(1, 31, 1.0, 1.0)])];
        assert!(matches!(
            report_from_predictions(&missing, ScoreConvention::Standard, Some(2)),
            Err(Error::Coverage(_))
        ));
    }

    #[test]
    fn seeds_differ_per_window() {
        assert_ne!(derive_seed(1, 31), derive_seed(1, 60));
        assert_ne!(derive_seed(1, 31), derive_seed(2, 31));
        assert_eq!(derive_seed(7, 125), derive_seed(7, 125));
    }
}
