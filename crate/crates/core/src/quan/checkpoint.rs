//! Self-describing JSON checkpoints with a stable byte layout.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::{Mat, ModelDims, ModelParams};
use super::TrainConfig;
use crate::rng::rng_from_seed;
use crate::{Error, Result};

pub const FORMAT: &str = "quan-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    /// Row-major.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub test_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub dims: ModelDims,
    pub tensors: Vec<NamedTensor>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, config: &TrainConfig, epoch: usize, test_loss: f64) -> Self {
        let tensors = params
            .tensors()
            .into_iter()
            .map(|(name, t)| NamedTensor { name, shape: [t.nrows(), t.ncols()], values: t.iter().copied().collect() })
            .collect();
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            config: config.clone(),
            dims: params.dims,
            tensors,
            meta: CheckpointMeta { epoch, test_loss },
        }
    }

    /// Rebuilds the parameters, checking every name and shape.
    pub fn params(&self) -> Result<ModelParams> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        let mut params = ModelParams::init(self.dims, &mut rng_from_seed(0));
        let names: Vec<(String, (usize, usize))> = params.tensors().into_iter().map(|(n, t)| (n, t.dim())).collect();
        if names.len() != self.tensors.len() {
            return Err(Error::Format(format!("expected {} tensors, found {}", names.len(), self.tensors.len())));
        }
        for ((slot, (name, dim)), stored) in params.tensors_mut().into_iter().zip(names).zip(&self.tensors) {
            if stored.name != name || (stored.shape[0], stored.shape[1]) != dim {
                return Err(Error::Format(format!("tensor {} {:?} does not match {name} {dim:?}", stored.name, stored.shape)));
            }
            *slot = Mat::from_shape_vec(dim, stored.values.clone()).map_err(|e| Error::Format(format!("tensor {name}: {e}")))?;
        }
        Ok(params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// SHA-256 of the serialized document, hex encoded.
    pub fn checksum(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
