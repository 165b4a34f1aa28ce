//! Run configuration: one TOML file plus command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tcft_bed::data::{PrepareConfig, SubDataset};
use tcft_bed::train::{ScoreConvention, TrainConfig, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            epochs: t.epochs,
            batch_size: t.batch_size,
            dropout: t.dropout,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sub_dataset: SubDataset,
    /// Directory holding `train_FDxxx.txt`, `test_FDxxx.txt`, `RUL_FDxxx.txt`.
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Defaults to the sub-dataset's small/medium/large sizes.
    pub window_sizes: Option<Vec<usize>>,
    pub tau_c: f64,
    pub tau_m: f64,
    pub rul_cap: f64,
    /// LSTM hidden size; filters, fc1 and attention width follow from it.
    pub hidden: usize,
    pub score: ScoreConvention,
    /// Model trained by `train`.
    pub variant: Variant,
    /// Variants run by `ablate`.
    pub variants: Vec<Variant>,
    pub jobs: usize,
    pub train: TrainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PrepareConfig::new(SubDataset::FD001);
        RunConfig {
            sub_dataset: SubDataset::FD001,
            data_dir: None,
            out_dir: PathBuf::from("runs"),
            seed: 0,
            window_sizes: None,
            tau_c: p.tau_c,
            tau_m: p.tau_m,
            rul_cap: p.rul_cap,
            hidden: 64,
            score: ScoreConvention::Standard,
            variant: Variant::Full,
            variants: vec![Variant::Full, Variant::NoTcn, Variant::AttentionReplacedFf],
            jobs: 1,
            train: TrainSection::default(),
        }
    }
}

/// Values given on the command line; each one replaces the file's value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path` (or starts from defaults) and applies `overrides`.
    /// Relative `data_dir` and `out_dir` in a file resolve against the
    /// file's directory.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let mut c = Self::from_toml(&text).with_context(|| format!("in config {}", p.display()))?;
                let base = p.parent().unwrap_or(Path::new(""));
                c.data_dir = c.data_dir.map(|d| base.join(d));
                c.out_dir = base.join(&c.out_dir);
                c
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(out) = &overrides.out_dir {
            config.out_dir = out.clone();
        }
        if let Some(jobs) = overrides.jobs {
            config.jobs = jobs;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            bail!("hidden must be at least 1");
        }
        if self.jobs == 0 {
            bail!("jobs must be at least 1");
        }
        if let Some(ws) = &self.window_sizes {
            if ws.is_empty() || ws.windows(2).any(|p| p[0] >= p[1]) || ws[0] == 0 {
                bail!("window_sizes must be positive and strictly ascending, got {ws:?}");
            }
        }
        self.train_config().validate()?;
        Ok(())
    }

    /// The data directory, which must exist.
    pub fn require_data_dir(&self) -> Result<&Path> {
        let dir = self
            .data_dir
            .as_deref()
            .context("data_dir is not set in the config")?;
        if !dir.is_dir() {
            bail!("data_dir {} does not exist", dir.display());
        }
        Ok(dir)
    }

    pub fn prepare_config(&self) -> PrepareConfig {
        let mut p = PrepareConfig::new(self.sub_dataset);
        if let Some(ws) = &self.window_sizes {
            p.window_sizes = ws.clone();
        }
        p.tau_c = self.tau_c;
        p.tau_m = self.tau_m;
        p.rul_cap = self.rul_cap;
        p
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            weight_decay: self.train.weight_decay,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: self.seed,
            dropout: self.train.dropout,
        }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out_dir.join("dataset")
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.out_dir.join("checkpoints")
    }

    pub fn checkpoint_path(&self, window: usize) -> PathBuf {
        self.checkpoint_dir()
            .join(format!("{}_w{window}.ckpt", self.sub_dataset))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_fill_defaults() {
        let c = RunConfig::from_toml("sub_dataset = \"FD003\"\n[train]\nepochs = 5\n").unwrap();
        assert_eq!(c.sub_dataset, SubDataset::FD003);
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.prepare_config().window_sizes, vec![38, 75, 125]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sub_dataset = \"FD001\"\nlearning_rat = 0.1\n").is_err());
        assert!(RunConfig::from_toml("[train]\nbatch = 3\n").is_err());
    }

    #[test]
    fn unknown_variant_lists_valid_names() {
        let err = RunConfig::from_toml("variants = [\"full\", \"no_attention\"]\n").unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("no_attention") && msg.contains("attention_replaced_ff"), "{msg}");
    }

    #[test]
    fn flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 3\njobs = 2\nout_dir = \"out\"\n").unwrap();
        let o = Overrides { seed: Some(9), out_dir: None, jobs: None };
        let c = RunConfig::load(Some(&path), &o).unwrap();
        assert_eq!((c.seed, c.jobs), (9, 2));
        assert_eq!(c.out_dir, dir.path().join("out"));
    }

    #[test]
    fn bad_values_are_rejected() {
        let o = Overrides::default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        for text in ["window_sizes = [60, 31]", "[train]\nepochs = 0", "hidden = 0", "score = \"other\""] {
            fs::write(&path, text).unwrap();
            assert!(RunConfig::load(Some(&path), &o).is_err(), "{text}");
        }
    }
}
