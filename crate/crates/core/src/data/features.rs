//! Normalisation, sensor statistics and sensor selection.

use serde::{Deserialize, Serialize};

use super::cmapss::{EngineTrajectory, NUM_SENSORS};
use crate::error::{Error, Result};

/// Per-channel training-split minima and maxima.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationStats {
    /// Fits min/max of each listed sensor over every row of `engines`.
    pub fn fit(engines: &[EngineTrajectory], sensors: &[usize]) -> Result<Self> {
        if engines.iter().all(|e| e.is_empty()) {
            return Err(Error::Data("cannot fit normalisation on an empty split".into()));
        }
        let mut min = vec![f64::INFINITY; sensors.len()];
        let mut max = vec![f64::NEG_INFINITY; sensors.len()];
        for row in engines.iter().flat_map(|e| &e.rows) {
            for (k, &s) in sensors.iter().enumerate() {
                min[k] = min[k].min(row.sensors[s]);
                max[k] = max[k].max(row.sensors[s]);
            }
        }
        Ok(NormalizationStats { min, max })
    }

    pub fn channels(&self) -> usize {
        self.min.len()
    }

    /// Scales `x` on `channel`; a constant training channel maps to 0.
    pub fn apply(&self, channel: usize, x: f64) -> f64 {
        min_max_normalize(x, self.min[channel], self.max[channel])
    }
}

/// `(x − min) / (max − min)`, or 0 when `max == min`.
pub fn min_max_normalize(x: f64, min: f64, max: f64) -> f64 {
    if max > min {
        (x - min) / (max - min)
    } else {
        0.0
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson correlation of `x` and `y`. A constant series gives 0.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::contract(format!("pearson_r: lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::contract("pearson_r needs at least two points"));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Fraction of consecutive steps with a strict increase.
pub fn monotonicity(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::contract("monotonicity needs at least two points"));
    }
    let ups = x.windows(2).filter(|w| w[1] - w[0] > 0.0).count();
    Ok(ups as f64 / (x.len() - 1) as f64)
}

/// `max(M, 1 − M)`: consistently falling sensors score as high as rising ones.
pub fn monotonic_strength(m: f64) -> f64 {
    m.max(1.0 - m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorSelection {
    /// Engine-averaged Pearson r against the cycle index, per sensor.
    pub r: Vec<f64>,
    /// Engine-averaged monotonicity, per sensor.
    pub m: Vec<f64>,
    /// 0-based sensor indices that passed, ascending.
    pub selected: Vec<usize>,
    pub tau_c: f64,
    pub tau_m: f64,
}

impl SensorSelection {
    pub fn strength(&self, sensor: usize) -> f64 {
        monotonic_strength(self.m[sensor])
    }
}

/// Keeps sensors with `|r| > tau_c` and `max(M, 1 − M) > tau_m`, where r
/// and M are computed per engine and averaged with equal engine weights.
pub fn select_sensors(train: &[EngineTrajectory], tau_c: f64, tau_m: f64) -> Result<SensorSelection> {
    if train.is_empty() {
        return Err(Error::Data("sensor selection needs at least one training engine".into()));
    }
    if let Some(e) = train.iter().find(|e| e.len() < 2) {
        return Err(Error::Data(format!("unit {} has fewer than two cycles", e.unit_id)));
    }
    let mut r = vec![0.0; NUM_SENSORS];
    let mut m = vec![0.0; NUM_SENSORS];
    for e in train {
        let cycles = e.cycles();
        for s in 0..NUM_SENSORS {
            let series = e.sensor(s);
            r[s] += pearson_r(&series, &cycles)?;
            m[s] += monotonicity(&series)?;
        }
    }
    let n = train.len() as f64;
    r.iter_mut().for_each(|v| *v /= n);
    m.iter_mut().for_each(|v| *v /= n);
    let selected: Vec<usize> = (0..NUM_SENSORS)
        .filter(|&s| r[s].abs() > tau_c && monotonic_strength(m[s]) > tau_m)
        .collect();
    if selected.is_empty() {
        return Err(Error::config(format!(
            "no sensor passes |r| > {tau_c} and monotonicity strength > {tau_m}; relax the thresholds"
        )));
    }
    Ok(SensorSelection {
        r,
        m,
        selected,
        tau_c,
        tau_m,
    })
}

/// Piece-wise linear label `min(cap, total − current)`.
pub fn piecewise_rul(total_cycles: usize, current_cycle: usize, cap: f64) -> Result<f64> {
    if current_cycle < 1 || current_cycle > total_cycles {
        return Err(Error::contract(format!(
            "cycle {current_cycle} outside 1..={total_cycles}"
        )));
    }
    Ok(((total_cycles - current_cycle) as f64).min(cap))
}

/// Labels for every cycle of a test engine whose true RUL after its last
/// observed cycle is `final_rul`: `min(cap, final_rul + (last − t))`.
pub fn test_lifetime_labels(length: usize, final_rul: f64, cap: f64) -> Vec<f64> {
    (1..=length)
        .map(|t| (final_rul + (length - t) as f64).min(cap))
        .collect()
}
