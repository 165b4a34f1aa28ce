//! On-disk layout of a prepared dataset.
//!
//! ```text
//! <dir>/manifest.txt        sub-dataset, sizes, thresholds, sensors, stats
//! <dir>/train_w<size>.bin   tensor bundle: features, labels, unit_ids, end_cycles
//! <dir>/test_w<size>.bin
//! ```

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::cmapss::{parse_cmapss, parse_rul, EngineTrajectory, SubDataset, NUM_SENSORS};
use super::features::{NormalizationStats, SensorSelection};
use super::windows::{PrepareConfig, PreparedData, WindowDataset};
use crate::error::{Error, Result};
use crate::tensor::{read_bundle, write_bundle};

pub const MANIFEST: &str = "manifest.txt";
const HEADER: &str = "tcft-bed dataset archive v1";

/// Reads `train_FDxxx.txt`, `test_FDxxx.txt` and `RUL_FDxxx.txt` from `dir`.
pub fn load_raw(dir: &Path, sub: SubDataset) -> Result<(Vec<EngineTrajectory>, Vec<EngineTrajectory>, Vec<f64>)> {
    let open = |name: String| -> Result<(BufReader<File>, String)> {
        let path = dir.join(&name);
        let file = File::open(&path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
        Ok((BufReader::new(file), path.display().to_string()))
    };
    let (r, name) = open(sub.train_file())?;
    let train = parse_cmapss(r, &name)?;
    let (r, name) = open(sub.test_file())?;
    let test = parse_cmapss(r, &name)?;
    let (r, name) = open(sub.rul_file())?;
    let rul = parse_rul(r, &name)?;
    Ok((train, test, rul))
}

fn join<T: std::fmt::Display>(v: impl IntoIterator<Item = T>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// The manifest text. Floats are written in shortest round-trip form so a
/// reread archive is bit-identical.
pub fn manifest_text(data: &PreparedData) -> String {
    let c = &data.config;
    let s = &data.selection;
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER}");
    let _ = writeln!(out, "sub_dataset {}", c.sub_dataset);
    let _ = writeln!(out, "window_sizes {}", join(&c.window_sizes));
    let _ = writeln!(out, "tau_c {:?}", c.tau_c);
    let _ = writeln!(out, "tau_m {:?}", c.tau_m);
    let _ = writeln!(out, "rul_cap {:?}", c.rul_cap);
    let _ = writeln!(out, "selected_sensors {}", join(s.selected.iter().map(|i| i + 1)));
    for k in 0..NUM_SENSORS {
        let _ = writeln!(out, "sensor {} r {:?} m {:?}", k + 1, s.r[k], s.m[k]);
    }
    for (k, &sensor) in s.selected.iter().enumerate() {
        let _ = writeln!(out, "norm {} min {:?} max {:?}", sensor + 1, data.stats.min[k], data.stats.max[k]);
    }
    for (w, (tr, te)) in c.window_sizes.iter().zip(data.train.iter().zip(&data.test)) {
        let _ = writeln!(out, "size {w} train_samples {} test_engines {}", tr.len(), te.len());
    }
    out
}

fn train_file(w: usize) -> String {
    format!("train_w{w}.bin")
}

fn test_file(w: usize) -> String {
    format!("test_w{w}.bin")
}

fn write_dataset(path: &Path, d: &WindowDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_bundle(&mut w, &d.to_named())?;
    use std::io::Write;
    w.flush()?;
    Ok(())
}

fn read_dataset(path: &Path) -> Result<WindowDataset> {
    let file = File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    WindowDataset::from_named(&read_bundle(BufReader::new(file))?)
}

pub fn write_archive(dir: &Path, data: &PreparedData) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, &w) in data.config.window_sizes.iter().enumerate() {
        write_dataset(&dir.join(train_file(w)), &data.train[i])?;
        write_dataset(&dir.join(test_file(w)), &data.test[i])?;
    }
    fs::write(dir.join(MANIFEST), manifest_text(data))?;
    Ok(())
}

struct ManifestReader<'a> {
    lines: Vec<(usize, Vec<&'a str>)>,
    source: String,
}

impl<'a> ManifestReader<'a> {
    fn error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            source_name: self.source.clone(),
            line,
            message: message.into(),
        }
    }

    fn single(&self, key: &str) -> Result<(usize, &[&'a str])> {
        self.lines
            .iter()
            .find(|(_, f)| f[0] == key)
            .map(|(n, f)| (*n, &f[1..]))
            .ok_or_else(|| self.error(0, format!("missing {key:?} entry")))
    }

    fn all(&self, key: &str) -> impl Iterator<Item = &(usize, Vec<&'a str>)> {
        let key = key.to_string();
        self.lines.iter().filter(move |(_, f)| f[0] == key)
    }

    fn num<T: std::str::FromStr>(&self, line: usize, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.error(line, format!("bad number {s:?}")))
    }

    fn scalar<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let (n, rest) = self.single(key)?;
        match rest {
            [v] => self.num(n, v),
            _ => Err(self.error(n, format!("{key} takes one value"))),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let (n, rest) = self.single(key)?;
        rest.iter().map(|v| self.num(n, v)).collect()
    }

    /// `key index a x b y` lines as `(index, x, y)`.
    fn pairs(&self, key: &str, a: &str, b: &str) -> Result<Vec<(usize, f64, f64)>> {
        self.all(key)
            .map(|(n, f)| match f.as_slice() {
                [_, i, ka, x, kb, y] if *ka == a && *kb == b => Ok((self.num(*n, i)?, self.num(*n, x)?, self.num(*n, y)?)),
                _ => Err(self.error(*n, format!("malformed {key} line"))),
            })
            .collect()
    }
}

pub fn read_archive(dir: &Path) -> Result<PreparedData> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| {
        Error::Data(format!(
            "no prepared dataset at {} ({e}); run `prepare` first",
            dir.display()
        ))
    })?;
    let mut lines: Vec<(usize, Vec<&str>)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
        .filter(|(_, f)| !f.is_empty())
        .collect();
    let source = path.display().to_string();
    if lines.first().map(|(_, f)| f.join(" ")) != Some(HEADER.to_string()) {
        return Err(Error::Format(format!("{source} is not a dataset manifest")));
    }
    lines.remove(0);
    let m = ManifestReader { lines, source };
    let sub: String = m.scalar("sub_dataset")?;
    let config = PrepareConfig {
        sub_dataset: sub.parse()?,
        window_sizes: m.list("window_sizes")?,
        tau_c: m.scalar("tau_c")?,
        tau_m: m.scalar("tau_m")?,
        rul_cap: m.scalar("rul_cap")?,
    };
    let selected: Vec<usize> = m.list::<usize>("selected_sensors")?.into_iter().map(|s| s - 1).collect();
    let mut r = vec![0.0; NUM_SENSORS];
    let mut mono = vec![0.0; NUM_SENSORS];
    for (k, rv, mv) in m.pairs("sensor", "r", "m")? {
        if !(1..=NUM_SENSORS).contains(&k) {
            return Err(Error::Format(format!("sensor index {k} out of range")));
        }
        r[k - 1] = rv;
        mono[k - 1] = mv;
    }
    let norms = m.pairs("norm", "min", "max")?;
    if norms.iter().map(|(k, _, _)| k - 1).collect::<Vec<_>>() != selected {
        return Err(Error::Format("normalisation entries do not match the selected sensors".into()));
    }
    let stats = NormalizationStats {
        min: norms.iter().map(|n| n.1).collect(),
        max: norms.iter().map(|n| n.2).collect(),
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for &w in &config.window_sizes {
        train.push(read_dataset(&dir.join(train_file(w)))?);
        test.push(read_dataset(&dir.join(test_file(w)))?);
    }
    Ok(PreparedData {
        selection: SensorSelection {
            r,
            m: mono,
            selected,
            tau_c: config.tau_c,
            tau_m: config.tau_m,
        },
        stats,
        train,
        test,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate, SyntheticConfig};
    use crate::data::windows::prepare;

    #[test]
    fn archive_round_trip() {
        let corpus = generate(&SyntheticConfig::small(), 3);
        let mut cfg = PrepareConfig::new(SubDataset::FD001);
        cfg.window_sizes = vec![10, 20, 40];
        let data = prepare(&corpus.train, &corpus.test, &corpus.rul, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_archive(dir.path(), &data).unwrap();
        let back = read_archive(dir.path()).unwrap();
        assert_eq!(back, data);
        assert_eq!(manifest_text(&back), fs::read_to_string(dir.path().join(MANIFEST)).unwrap());
    }

    #[test]
    fn missing_archive_points_at_prepare() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_archive(&dir.path().join("nope")).unwrap_err();
        assert!(err.to_string().contains("prepare"), "{err}");
    }
}
