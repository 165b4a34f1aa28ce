//! Reading and writing the C-MAPSS text format.
//!
//! One row per line: `unit cycle setting1..3 sensor1..21`, whitespace
//! separated. Ground-truth files hold one integer RUL per test engine.

use std::fmt::Write as _;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_SETTINGS: usize = 3;
pub const NUM_SENSORS: usize = 21;
pub const NUM_COLUMNS: usize = 2 + NUM_SETTINGS + NUM_SENSORS;

#[derive(Clone, Debug, PartialEq)]
pub struct CycleRow {
    pub cycle: u32,
    pub settings: [f64; NUM_SETTINGS],
    pub sensors: [f64; NUM_SENSORS],
}

/// One unit's record, cycles `1..=len()` in order.
#[derive(Clone, Debug, PartialEq)]
pub struct EngineTrajectory {
    pub unit_id: u32,
    pub rows: Vec<CycleRow>,
}

impl EngineTrajectory {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Values of sensor `s` (0-based) over the whole trajectory.
    pub fn sensor(&self, s: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.sensors[s]).collect()
    }

    pub fn cycles(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.cycle as f64).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubDataset {
    FD001,
    FD002,
    FD003,
    FD004,
}

impl SubDataset {
    pub const ALL: [SubDataset; 4] = [SubDataset::FD001, SubDataset::FD002, SubDataset::FD003, SubDataset::FD004];

    pub fn name(self) -> &'static str {
        match self {
            SubDataset::FD001 => "FD001",
            SubDataset::FD002 => "FD002",
            SubDataset::FD003 => "FD003",
            SubDataset::FD004 => "FD004",
        }
    }

    /// `(train, test)` trajectory counts of the published dataset.
    pub fn trajectory_counts(self) -> (usize, usize) {
        match self {
            SubDataset::FD001 => (100, 100),
            SubDataset::FD002 => (260, 259),
            SubDataset::FD003 => (100, 100),
            SubDataset::FD004 => (248, 249),
        }
    }

    /// Default `[small, medium, large]` window lengths.
    pub fn default_window_sizes(self) -> [usize; 3] {
        match self {
            SubDataset::FD001 => [31, 60, 125],
            SubDataset::FD002 => [21, 75, 125],
            SubDataset::FD003 => [38, 75, 125],
            SubDataset::FD004 => [19, 75, 125],
        }
    }

    pub fn train_file(self) -> String {
        format!("train_{}.txt", self.name())
    }

    pub fn test_file(self) -> String {
        format!("test_{}.txt", self.name())
    }

    pub fn rul_file(self) -> String {
        format!("RUL_{}.txt", self.name())
    }
}

impl FromStr for SubDataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SubDataset::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown sub-dataset {s:?} (expected FD001..FD004)")))
    }
}

impl std::fmt::Display for SubDataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn parse_error(source: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.to_string(),
        line,
        message: message.into(),
    }
}

/// Parses a C-MAPSS train or test file. `source` names the input in error
/// messages. Each unit's rows must be contiguous and its cycles must run
/// 1, 2, 3, ...
pub fn parse_cmapss<R: BufRead>(reader: R, source: &str) -> Result<Vec<EngineTrajectory>> {
    let mut engines: Vec<EngineTrajectory> = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != NUM_COLUMNS {
            return Err(parse_error(
                source,
                lineno,
                format!("expected {NUM_COLUMNS} columns, found {}", fields.len()),
            ));
        }
        let mut values = [0.0; NUM_COLUMNS];
        for (v, f) in values.iter_mut().zip(&fields) {
            *v = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_error(source, lineno, format!("non-numeric field {f:?}")))?;
        }
        let as_index = |v: f64, what: &str| -> Result<u32> {
            if v.fract() != 0.0 || v < 1.0 || v > u32::MAX as f64 {
                return Err(parse_error(source, lineno, format!("{what} must be a positive integer, found {v}")));
            }
            Ok(v as u32)
        };
        let unit_id = as_index(values[0], "unit id")?;
        let cycle = as_index(values[1], "cycle")?;
        let row = CycleRow {
            cycle,
            settings: values[2..2 + NUM_SETTINGS].try_into().expect("slice length"),
            sensors: values[2 + NUM_SETTINGS..].try_into().expect("slice length"),
        };
        match engines.last_mut() {
            Some(e) if e.unit_id == unit_id => {
                let expected = e.rows.len() as u32 + 1;
                if cycle != expected {
                    return Err(parse_error(
                        source,
                        lineno,
                        format!("unit {unit_id}: cycle {cycle} follows {}, expected {expected}", expected - 1),
                    ));
                }
                e.rows.push(row);
            }
            _ => {
                if engines.iter().any(|e| e.unit_id == unit_id) {
                    return Err(parse_error(source, lineno, format!("unit {unit_id} rows are not contiguous")));
                }
                if cycle != 1 {
                    return Err(parse_error(
                        source,
                        lineno,
                        format!("unit {unit_id} starts at cycle {cycle}, expected 1"),
                    ));
                }
                engines.push(EngineTrajectory {
                    unit_id,
                    rows: vec![row],
                });
            }
        }
    }
    Ok(engines)
}

/// Parses a ground-truth RUL file: one non-negative number per line.
pub fn parse_rul<R: BufRead>(reader: R, source: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite() && *v >= 0.0)
            .ok_or_else(|| parse_error(source, index + 1, format!("invalid RUL value {t:?}")))?;
        out.push(v);
    }
    Ok(out)
}

/// Renders trajectories in the C-MAPSS text layout.
pub fn to_cmapss_text(engines: &[EngineTrajectory]) -> String {
    let mut out = String::new();
    for e in engines {
        for r in &e.rows {
            let _ = write!(out, "{} {}", e.unit_id, r.cycle);
            for v in r.settings.iter().chain(&r.sensors) {
                let _ = write!(out, " {v:.4}");
            }
            out.push('\n');
        }
    }
    out
}
