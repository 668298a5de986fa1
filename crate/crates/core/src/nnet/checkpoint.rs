use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, AdamState, MlpNetwork};
use crate::error::{invalid, Error, Result};
use crate::numerics::Matrix;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned on-disk form of an [`MlpNetwork`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub optimizer_state: AdamState,
}

impl MlpNetwork {
    pub fn to_checkpoint(&self) -> NetworkCheckpoint {
        NetworkCheckpoint {
            version: CHECKPOINT_VERSION,
            layer_sizes: self.layer_sizes.clone(),
            activations: self.activations.clone(),
            weights: self.weights.clone(),
            biases: self.biases.clone(),
            optimizer_state: self.optimizer.clone(),
        }
    }

    pub fn from_checkpoint(ck: NetworkCheckpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: ck.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut net = MlpNetwork::from_parameters(&ck.activations, ck.weights, ck.biases)?;
        if net.layer_sizes != ck.layer_sizes {
            return Err(invalid("checkpoint layer_sizes disagree with weight shapes"));
        }
        let opt = &ck.optimizer_state;
        let shapes_match = opt.m_weights.len() == net.weights.len()
            && opt.v_weights.len() == net.weights.len()
            && opt.m_biases.len() == net.biases.len()
            && opt.v_biases.len() == net.biases.len()
            && net.weights.iter().enumerate().all(|(l, w)| {
                opt.m_weights[l].shape() == w.shape()
                    && opt.v_weights[l].shape() == w.shape()
                    && opt.m_biases[l].len() == net.biases[l].len()
                    && opt.v_biases[l].len() == net.biases[l].len()
            });
        if !shapes_match {
            return Err(invalid("optimizer state shapes disagree with parameters"));
        }
        net.optimizer = ck.optimizer_state;
        Ok(net)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let s = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.display().to_string()));
        }
        let ck: NetworkCheckpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_checkpoint(ck)
    }
}
