//! Run manifests. Each command writes one before touching any artifact and
//! rewrites it with `status complete` once every output is on disk.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const HEADER: &str = "tcft-bed run manifest v1";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Per-file digests plus one digest over the sorted `(name, digest)` list,
/// so the combined hash ignores where the files live.
pub fn content_hash(paths: &[PathBuf]) -> Result<(Vec<(String, String)>, String)> {
    let mut files = Vec::with_capacity(paths.len());
    for p in paths {
        let name = p
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string());
        files.push((name, sha256_file(p)?));
    }
    files.sort();
    let mut h = Sha256::new();
    for (name, digest) in &files {
        h.update(name.as_bytes());
        h.update([0]);
        h.update(digest.as_bytes());
        h.update(b"\n");
    }
    Ok((files, hex::encode(h.finalize())))
}

/// Regular files directly inside `dir`, sorted by name.
pub fn files_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub struct Manifest {
    path: PathBuf,
    body: String,
}

impl Manifest {
    /// Writes `manifest_<command>.txt` into the output directory with
    /// `status incomplete`.
    pub fn begin(config: &RunConfig, command: &str, inputs: &[PathBuf]) -> Result<Self> {
        fs::create_dir_all(&config.out_dir)
            .with_context(|| format!("creating {}", config.out_dir.display()))?;
        let (files, combined) = content_hash(inputs)?;
        let mut body = format!("command {command}\n");
        body.push_str(&format!("score_convention {}\n", config.score.name()));
        for (name, digest) in &files {
            body.push_str(&format!("input {name} sha256:{digest}\n"));
        }
        body.push_str(&format!("input_hash sha256:{combined}\n"));
        body.push_str("\n[config]\n");
        body.push_str(&toml::to_string(config).context("serialising config")?);
        let m = Manifest {
            path: config.out_dir.join(format!("manifest_{command}.txt")),
            body,
        };
        m.write("incomplete", &[])?;
        Ok(m)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn write(&self, status: &str, outputs: &[(String, String)]) -> Result<()> {
        let mut text = format!("{HEADER}\nstatus {status}\n");
        for (name, digest) in outputs {
            text.push_str(&format!("output {name} sha256:{digest}\n"));
        }
        text.push_str(&self.body);
        fs::write(&self.path, text).with_context(|| format!("writing {}", self.path.display()))
    }

    /// Hashes every output and marks the run complete.
    pub fn complete(self, outputs: &[PathBuf]) -> Result<()> {
        let (files, _) = content_hash(outputs)?;
        self.write("complete", &files)
    }
}
