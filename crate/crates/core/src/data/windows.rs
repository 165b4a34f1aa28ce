//! Multi-window segmentation of normalised engine series.

use serde::{Deserialize, Serialize};

use super::cmapss::{EngineTrajectory, SubDataset};
use super::features::{piecewise_rul, select_sensors, NormalizationStats, SensorSelection};
use crate::error::{Error, Result};
use crate::tensor::{NamedTensor, Tensor};

/// One engine's selected, normalised channels, stored channel-major
/// (`values[c·len + t]`).
#[derive(Clone, Debug, PartialEq)]
pub struct EngineSeries {
    pub unit_id: u32,
    pub channels: usize,
    pub len: usize,
    pub values: Vec<f64>,
}

impl EngineSeries {
    pub fn from_trajectory(e: &EngineTrajectory, sensors: &[usize], stats: &NormalizationStats) -> Self {
        let len = e.len();
        let mut values = Vec::with_capacity(sensors.len() * len);
        for (k, &s) in sensors.iter().enumerate() {
            values.extend(e.rows.iter().map(|r| stats.apply(k, r.sensors[s])));
        }
        EngineSeries {
            unit_id: e.unit_id,
            channels: sensors.len(),
            len,
            values,
        }
    }

    /// Appends the `[C, w]` block of cycles `end − w + 1 ..= end` (1-based).
    fn extend_window(&self, end: usize, w: usize, out: &mut Vec<f64>) {
        for c in 0..self.channels {
            let row = &self.values[c * self.len..(c + 1) * self.len];
            out.extend_from_slice(&row[end - w..end]);
        }
    }
}

/// Fixed-length samples `features[N, C, w]` with labels and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowDataset {
    pub window: usize,
    pub channels: usize,
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
    pub unit_ids: Vec<u32>,
    pub end_cycles: Vec<u32>,
}

impl WindowDataset {
    pub fn new(window: usize, channels: usize) -> Self {
        WindowDataset {
            window,
            channels,
            features: Vec::new(),
            labels: Vec::new(),
            unit_ids: Vec::new(),
            end_cycles: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn sample_len(&self) -> usize {
        self.channels * self.window
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.features[i * n..(i + 1) * n]
    }

    fn push_window(&mut self, series: &EngineSeries, end: usize, label: f64) {
        series.extend_window(end, self.window, &mut self.features);
        self.labels.push(label);
        self.unit_ids.push(series.unit_id);
        self.end_cycles.push(end as u32);
    }

    /// Gathers samples into an input tensor `[B, C, w]` and its labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<f64>) {
        let mut values = Vec::with_capacity(indices.len() * self.sample_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        let x = Tensor::new(vec![indices.len(), self.channels, self.window], values).expect("batch shape");
        (x, labels)
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        let n = self.len();
        let entry = |name: &str, shape: Vec<usize>, values: Vec<f64>| NamedTensor {
            name: name.to_string(),
            tensor: Tensor::new(shape, values).expect("dataset shape"),
        };
        vec![
            entry("features", vec![n, self.channels, self.window], self.features.clone()),
            entry("labels", vec![n], self.labels.clone()),
            entry("unit_ids", vec![n], self.unit_ids.iter().map(|&u| u as f64).collect()),
            entry("end_cycles", vec![n], self.end_cycles.iter().map(|&c| c as f64).collect()),
        ]
    }

    pub fn from_named(entries: &[NamedTensor]) -> Result<Self> {
        let get = |name: &str| {
            entries
                .iter()
                .find(|e| e.name == name)
                .map(|e| &e.tensor)
                .ok_or_else(|| Error::Format(format!("dataset bundle lacks {name:?}")))
        };
        let features = get("features")?;
        let s = features.shape();
        if s.len() != 3 {
            return Err(Error::Format(format!("features must be rank 3, found {s:?}")));
        }
        let (n, channels, window) = (s[0], s[1], s[2]);
        let column = |name: &str| -> Result<Vec<f64>> {
            let t = get(name)?;
            if t.shape() != [n] {
                return Err(Error::Format(format!("{name} has shape {:?}, expected [{n}]", t.shape())));
            }
            Ok(t.values().to_vec())
        };
        Ok(WindowDataset {
            window,
            channels,
            features: features.values().to_vec(),
            labels: column("labels")?,
            unit_ids: column("unit_ids")?.into_iter().map(|v| v as u32).collect(),
            end_cycles: column("end_cycles")?.into_iter().map(|v| v as u32).collect(),
        })
    }
}

/// Every window of length `w` with shift 1, labelled with the piece-wise
/// RUL of its last cycle. Series shorter than `w` contribute nothing.
pub fn segment_train(series: &EngineSeries, w: usize, cap: f64) -> Result<WindowDataset> {
    let mut out = WindowDataset::new(w, series.channels);
    append_train_windows(&mut out, series, cap)?;
    Ok(out)
}

fn append_train_windows(out: &mut WindowDataset, series: &EngineSeries, cap: f64) -> Result<()> {
    let w = out.window;
    if w == 0 {
        return Err(Error::config("window size must be positive"));
    }
    for end in w..=series.len {
        let label = piecewise_rul(series.len, end, cap)?;
        out.push_window(series, end, label);
    }
    Ok(())
}

pub fn build_train_windows(series: &[EngineSeries], w: usize, cap: f64) -> Result<WindowDataset> {
    let channels = series.first().map_or(0, |s| s.channels);
    let mut out = WindowDataset::new(w, channels);
    for s in series {
        append_train_windows(&mut out, s, cap)?;
    }
    Ok(out)
}

/// Puts each test engine into the largest window size it can fill, keeping
/// only its final `w` cycles, labelled `min(cap, final_rul)`. `sizes` must
/// be ascending; the result has one dataset per size, in the same order.
pub fn assign_test_windows(
    series: &[EngineSeries],
    final_ruls: &[f64],
    sizes: &[usize],
    cap: f64,
) -> Result<Vec<WindowDataset>> {
    if series.len() != final_ruls.len() {
        return Err(Error::Data(format!(
            "{} test engines but {} ground-truth RUL values",
            series.len(),
            final_ruls.len()
        )));
    }
    if sizes.is_empty() || sizes.contains(&0) || sizes.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::config(format!("window sizes {sizes:?} must be positive and ascending")));
    }
    let channels = series.first().map_or(0, |s| s.channels);
    let mut out: Vec<WindowDataset> = sizes.iter().map(|&w| WindowDataset::new(w, channels)).collect();
    for (s, &rul) in series.iter().zip(final_ruls) {
        let slot = sizes.iter().rposition(|&w| s.len >= w).ok_or_else(|| {
            Error::Data(format!(
                "test unit {} has {} cycles, fewer than the smallest window {}",
                s.unit_id, s.len, sizes[0]
            ))
        })?;
        out[slot].push_window(s, s.len, rul.min(cap));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareConfig {
    pub sub_dataset: SubDataset,
    /// Ascending `[small, medium, large]`.
    pub window_sizes: Vec<usize>,
    pub tau_c: f64,
    pub tau_m: f64,
    pub rul_cap: f64,
}

impl PrepareConfig {
    pub fn new(sub_dataset: SubDataset) -> Self {
        PrepareConfig {
            sub_dataset,
            window_sizes: sub_dataset.default_window_sizes().to_vec(),
            tau_c: 0.5,
            tau_m: 0.7,
            rul_cap: 125.0,
        }
    }
}

/// Everything `prepare` derives from one sub-dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub config: PrepareConfig,
    pub selection: SensorSelection,
    pub stats: NormalizationStats,
    /// One dataset per window size, same order as `config.window_sizes`.
    pub train: Vec<WindowDataset>,
    pub test: Vec<WindowDataset>,
}

impl PreparedData {
    pub fn channels(&self) -> usize {
        self.selection.selected.len()
    }

    pub fn test_engine_count(&self) -> usize {
        self.test.iter().map(|d| d.len()).sum()
    }
}

/// Sensor selection and normalisation fitted on `train` only, then
/// segmentation of both splits.
pub fn prepare(
    train: &[EngineTrajectory],
    test: &[EngineTrajectory],
    final_ruls: &[f64],
    config: &PrepareConfig,
) -> Result<PreparedData> {
    if config.rul_cap <= 0.0 {
        return Err(Error::config("rul_cap must be positive"));
    }
    let selection = select_sensors(train, config.tau_c, config.tau_m)?;
    let stats = NormalizationStats::fit(train, &selection.selected)?;
    let to_series = |engines: &[EngineTrajectory]| -> Vec<EngineSeries> {
        engines
            .iter()
            .map(|e| EngineSeries::from_trajectory(e, &selection.selected, &stats))
            .collect()
    };
    let train_series = to_series(train);
    let test_series = to_series(test);
    let test_sets = assign_test_windows(&test_series, final_ruls, &config.window_sizes, config.rul_cap)?;
    let train_sets = config
        .window_sizes
        .iter()
        .map(|&w| build_train_windows(&train_series, w, config.rul_cap))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedData {
        config: config.clone(),
        selection,
        stats,
        train: train_sets,
        test: test_sets,
    })
}
