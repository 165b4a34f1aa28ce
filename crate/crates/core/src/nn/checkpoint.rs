//! Versioned model checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"TCFTCKPT"  u32 version  u64 config_len  config_len bytes of JSON
//! tensor bundle (see tensor::write_bundle)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::model::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{read_bundle, write_bundle};

const MAGIC: &[u8; 8] = b"TCFTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, model: &Model) -> Result<()> {
    let config = serde_json::to_vec(model.config()).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(config.len() as u64).to_le_bytes())?;
    w.write_all(&config)?;
    write_bundle(w, &model.params().to_named())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut config = vec![0u8; len];
    r.read_exact(&mut config)?;
    let config: ModelConfig = serde_json::from_slice(&config).map_err(|e| Error::Format(e.to_string()))?;
    let mut model = Model::new(config)?;
    let entries = read_bundle(r)?;
    model.params_mut().load_named(&entries)?;
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, model)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}
