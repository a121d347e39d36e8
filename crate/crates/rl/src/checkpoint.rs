use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RlError};
use crate::network::{NetworkConfig, QNetwork};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub name: String,
    /// Output dimension.
    pub rows: usize,
    /// Input dimension.
    pub cols: usize,
    /// Row-major `(rows, cols)`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: NetworkConfig,
    pub weights: Vec<LayerWeights>,
    pub episode: usize,
    pub mean_reward: Option<f64>,
}

impl Checkpoint {
    pub fn from_network(net: &QNetwork, episode: usize, mean_reward: Option<f64>) -> Self {
        let weights = net
            .layer_names()
            .into_iter()
            .zip(net.layers())
            .map(|(name, l)| LayerWeights {
                name,
                rows: l.n_out(),
                cols: l.n_in(),
                weight: l.weight.iter().copied().collect(),
                bias: l.bias.to_vec(),
            })
            .collect();
        Self {
            version: CHECKPOINT_VERSION,
            config: net.config.clone(),
            weights,
            episode,
            mean_reward,
        }
    }

    pub fn to_network(&self) -> Result<QNetwork> {
        if self.version != CHECKPOINT_VERSION {
            return Err(RlError::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let mut net = QNetwork::new(self.config.clone())?;
        let names = net.layer_names();
        if names.len() != self.weights.len() {
            return Err(RlError::Checkpoint(format!(
                "expected {} layers, found {}",
                names.len(),
                self.weights.len()
            )));
        }
        for ((layer, name), w) in net.layers_mut().into_iter().zip(&names).zip(&self.weights) {
            if &w.name != name || w.rows != layer.n_out() || w.cols != layer.n_in() || w.bias.len() != w.rows {
                return Err(RlError::Checkpoint(format!(
                    "layer {} ({}x{}) does not match {name} ({}x{})",
                    w.name,
                    w.rows,
                    w.cols,
                    layer.n_out(),
                    layer.n_in()
                )));
            }
            layer.weight = Array2::from_shape_vec((w.rows, w.cols), w.weight.clone())
                .map_err(|e| RlError::Checkpoint(e.to_string()))?;
            layer.bias = Array1::from(w.bias.clone());
        }
        if !net.is_finite() {
            return Err(RlError::Checkpoint("non-finite weights".into()));
        }
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
