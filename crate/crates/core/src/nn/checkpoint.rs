//! Model checkpoints.
//!
//! A checkpoint is a single JSON object:
//!
//! ```text
//! {
//!   "format": "dum-checkpoint",
//!   "version": 1,
//!   "model": { "layers": [ { "weight": {"rows", "cols", "data"}, "bias": [...],
//!                            "activation": "relu" | "linear", "dropout": p,
//!                            "spectral": null | {"coeff", "u", "v"} }, ... ],
//!              "features_at": k },
//!   "head": <head-specific object or null>
//! }
//! ```
//!
//! Weight matrices are stored input × output, row-major. Floats are written
//! with shortest round-trip formatting, so a save/load cycle is lossless.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::mlp::MlpModel;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "dum-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<H> {
    pub format: String,
    pub version: u32,
    pub model: MlpModel,
    pub head: Option<H>,
}

impl<H> Checkpoint<H> {
    pub fn new(model: MlpModel, head: Option<H>) -> Self {
        Checkpoint { format: CHECKPOINT_FORMAT.to_string(), version: CHECKPOINT_VERSION, model, head }
    }
}

pub fn save_checkpoint<H: Serialize>(path: &Path, checkpoint: &Checkpoint<H>) -> Result<()> {
    let text = serde_json::to_string(checkpoint).map_err(|e| Error::Checkpoint(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint<H: DeserializeOwned>(path: &Path) -> Result<Checkpoint<H>> {
    let text = fs::read_to_string(path)?;
    let ck: Checkpoint<H> = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if ck.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unexpected format tag {:?}", ck.format)));
    }
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", ck.version)));
    }
    ck.model.validate()?;
    Ok(ck)
}
