//! The two classifiers and a tagged configuration that builds either.

mod bcgcnse;
mod resnet3d;

use serde::{Deserialize, Serialize};

pub use bcgcnse::{build_bcgcnse, BcGcnSeConfig};
pub use resnet3d::{build_resnet3d, Cnn3dConfig, HEAD, HEAD_LAYERS};

use crate::error::Result;
use crate::nn::ModelGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cnn3d,
    Bcgcnse,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Cnn3d => "cnn3d",
            ModelKind::Bcgcnse => "bcgcnse",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Cnn3d(Cnn3dConfig),
    Bcgcnse(BcGcnSeConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Cnn3d(_) => ModelKind::Cnn3d,
            ModelConfig::Bcgcnse(_) => ModelKind::Bcgcnse,
        }
    }

    pub fn build(&self, seed: u64) -> Result<ModelGraph> {
        match self {
            ModelConfig::Cnn3d(c) => build_resnet3d(c, seed),
            ModelConfig::Bcgcnse(c) => build_bcgcnse(c, seed),
        }
    }

    /// Shape of one input sample.
    pub fn input_shape(&self) -> Vec<usize> {
        match self {
            ModelConfig::Cnn3d(c) => {
                let [x, y, z] = c.input_shape;
                vec![1, x, y, z]
            }
            ModelConfig::Bcgcnse(c) => vec![1, c.n_nodes, c.n_nodes],
        }
    }
}
