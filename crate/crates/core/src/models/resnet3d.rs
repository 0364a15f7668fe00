use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{conv_out_len, Conv3d, Dense, Gap, MaxPool3d, ModelGraph, Relu, ResidualBlock};

/// Dense head widths after global pooling.
pub const HEAD: [usize; 2] = [128, 32];

/// Residual 3-D classifier: 7³ stride-2 stem, 3³ stride-2 max pooling, four
/// stages of residual blocks, global average pooling and a dense head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Cnn3dConfig {
    pub input_shape: [usize; 3],
    pub stem_channels: usize,
    pub stage_widths: [usize; 4],
    pub blocks_per_stage: usize,
}

impl Default for Cnn3dConfig {
    fn default() -> Self {
        Cnn3dConfig {
            input_shape: [115, 144, 118],
            stem_channels: 8,
            stage_widths: [8, 16, 32, 64],
            blocks_per_stage: 2,
        }
    }
}

impl Cnn3dConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stem_channels == 0 || self.stage_widths.contains(&0) || self.blocks_per_stage == 0 {
            return Err(Error::Config(format!("widths and block count must be positive: {self:?}")));
        }
        if self.input_shape.contains(&0) {
            return Err(Error::Config("input shape must be positive".into()));
        }
        Ok(())
    }

    /// Spatial size of each stage's output.
    pub fn stage_shapes(&self) -> [[usize; 3]; 4] {
        let mut s = self.input_shape.map(|n| conv_out_len(n, 7, 2, 3));
        s = s.map(|n| conv_out_len(n, 3, 2, 1));
        let mut out = [[0; 3]; 4];
        for (stage, o) in out.iter_mut().enumerate() {
            if stage > 0 {
                s = s.map(|n| conv_out_len(n, 3, 2, 1));
            }
            *o = s;
        }
        out
    }
}

pub fn build_resnet3d(config: &Cnn3dConfig, seed: u64) -> Result<ModelGraph> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [x, y, z] = config.input_shape;
    let mut m = ModelGraph::new(&[1, x, y, z]);
    m.push("stem", Conv3d::new(1, config.stem_channels, 7, 2, 3, &mut rng))?;
    m.push("stem_relu", Relu::default())?;
    m.push("pool", MaxPool3d::new(3, 2, 1))?;
    let mut c_in = config.stem_channels;
    for (s, &w) in config.stage_widths.iter().enumerate() {
        for b in 0..config.blocks_per_stage {
            let stride = if s > 0 && b == 0 { 2 } else { 1 };
            let block = ResidualBlock::new(c_in, w, stride, &mut rng);
            let name = format!("stage{}.block{}", s + 1, b + 1);
            if b + 1 == config.blocks_per_stage {
                m.push_tap(name, block)?;
            } else {
                m.push(name, block)?;
            }
            c_in = w;
        }
    }
    m.push("gap", Gap::default())?;
    m.push("fc1", Dense::new(c_in, HEAD[0], &mut rng))?;
    m.push("relu1", Relu::default())?;
    m.push("fc2", Dense::new(HEAD[0], HEAD[1], &mut rng))?;
    m.push("relu2", Relu::default())?;
    m.push("out", Dense::new(HEAD[1], 1, &mut rng))?;
    Ok(m)
}

/// Names of the dense head layers, the only ones left trainable when the
/// backbone is frozen.
pub const HEAD_LAYERS: [&str; 3] = ["fc1", "fc2", "out"];
