//! JSON model checkpoints.
//!
//! A checkpoint records the network configuration, every parameter buffer
//! (name, role, shape, values) and the dropout generator state. Floats are
//! written in shortest round-trip form, so reloading is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NetConfig, TwoLayerNet};
use crate::tensor::ParamStore;
use crate::train::RngState;

pub const CHECKPOINT_FORMAT: &str = "meixnernet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub net: NetConfig,
    pub params: ParamStore,
    pub rng: Option<RngState>,
}

impl Checkpoint {
    pub fn new(net: &TwoLayerNet, rng: Option<RngState>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            net: net.config().clone(),
            params: net.store().clone(),
            rng,
        }
    }

    pub fn into_net(self) -> Result<TwoLayerNet> {
        TwoLayerNet::from_parts(self.net, self.params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        // Check the envelope before the body so that a version bump reports
        // as such rather than as a schema error.
        let value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Checkpoint("not a model checkpoint".into()));
        }
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        Ok(serde_json::from_value(value)?)
    }
}

pub fn save_checkpoint(net: &TwoLayerNet, rng: Option<&RngState>, path: impl AsRef<Path>) -> Result<()> {
    let json = Checkpoint::new(net, rng.cloned()).to_json()?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(TwoLayerNet, Option<RngState>)> {
    let ckpt = Checkpoint::from_json(&fs::read_to_string(path)?)?;
    let rng = ckpt.rng.clone();
    Ok((ckpt.into_net()?, rng))
}
