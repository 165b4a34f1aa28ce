//! A seeded toy corpus in the C-MAPSS layout, for tests and smoke runs.
//!
//! Every engine follows a hidden health index that falls slowly and then
//! sharply towards failure. Sensors see that index with different signs and
//! gains, a few sensors are constant and a few are pure noise.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cmapss::{to_cmapss_text, CycleRow, EngineTrajectory, SubDataset, NUM_SENSORS};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub train_engines: usize,
    pub test_engines: usize,
    /// Inclusive range of run-to-failure lengths.
    pub min_life: usize,
    pub max_life: usize,
    /// Shortest truncated test sequence.
    pub min_test_len: usize,
    /// Measurement noise relative to a sensor's drift per cycle.
    pub noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train_engines: 100,
            test_engines: 100,
            min_life: 128,
            max_life: 362,
            min_test_len: 31,
            noise: 0.3,
        }
    }
}

impl SyntheticConfig {
    /// A handful of short engines for fast tests.
    pub fn small() -> Self {
        SyntheticConfig {
            train_engines: 6,
            test_engines: 5,
            min_life: 50,
            max_life: 90,
            min_test_len: 10,
            noise: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<EngineTrajectory>,
    pub test: Vec<EngineTrajectory>,
    /// True RUL after the last observed cycle of each test engine.
    pub rul: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Kind {
    Constant(f64),
    Noise(f64),
    /// base, gain per unit of degradation, per-cycle drift
    Trend(f64, f64, f64),
}

fn sensor_kinds() -> [Kind; NUM_SENSORS] {
    let mut kinds = [Kind::Constant(0.0); NUM_SENSORS];
    for (s, k) in kinds.iter_mut().enumerate() {
        let base = 100.0 + 25.0 * s as f64;
        *k = match s {
            0 | 4 | 9 | 15 | 17 | 18 => Kind::Constant(base),
            5 | 13 => Kind::Noise(base),
            _ if s % 2 == 0 => Kind::Trend(base, 4.0 + s as f64 * 0.2, 0.01),
            _ => Kind::Trend(base, -(3.0 + s as f64 * 0.1), -0.01),
        };
    }
    kinds
}

fn engine(unit: u32, life: usize, observed: usize, noise: f64, rng: &mut ChaCha8Rng) -> EngineTrajectory {
    let kinds = sensor_kinds();
    let rows = (1..=observed)
        .map(|t| {
            let x = t as f64 / life as f64;
            let degradation = x * x + (6.0 * (x - 1.0)).exp();
            let sensors = std::array::from_fn(|s| match kinds[s] {
                Kind::Constant(b) => b,
                Kind::Noise(b) => b + rng.random_range(-1.0..1.0),
                Kind::Trend(b, gain, drift) => {
                    let level = b + gain * degradation + drift * t as f64;
                    level + noise * drift.abs() * rng.random_range(-1.0..1.0)
                }
            });
            CycleRow {
                cycle: t as u32,
                settings: [rng.random_range(-0.002..0.002), rng.random_range(-0.0005..0.0005), 100.0],
                sensors,
            }
        })
        .collect();
    EngineTrajectory { unit_id: unit, rows }
}

pub fn generate(config: &SyntheticConfig, seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let life = |rng: &mut ChaCha8Rng| rng.random_range(config.min_life..=config.max_life);
    let train = (1..=config.train_engines)
        .map(|u| {
            let l = life(&mut rng);
            engine(u as u32, l, l, config.noise, &mut rng)
        })
        .collect();
    let mut test = Vec::with_capacity(config.test_engines);
    let mut rul = Vec::with_capacity(config.test_engines);
    for u in 1..=config.test_engines {
        let l = life(&mut rng).max(config.min_test_len + 1);
        let observed = rng.random_range(config.min_test_len..l);
        test.push(engine(u as u32, l, observed, config.noise, &mut rng));
        rul.push((l - observed) as f64);
    }
    SyntheticCorpus { train, test, rul }
}

/// Writes the corpus as `train_X.txt`, `test_X.txt` and `RUL_X.txt`.
pub fn write_corpus(dir: &Path, sub: SubDataset, corpus: &SyntheticCorpus) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(sub.train_file()), to_cmapss_text(&corpus.train))?;
    fs::write(dir.join(sub.test_file()), to_cmapss_text(&corpus.test))?;
    let rul: String = corpus.rul.iter().map(|r| format!("{r}\n")).collect();
    fs::write(dir.join(sub.rul_file()), rul)?;
    Ok(())
}
