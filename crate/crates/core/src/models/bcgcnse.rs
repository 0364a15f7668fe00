use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ChannelSe, Dense, EdgePool, Gpc, ModelGraph, NodePool, Relu};

/// Edge-based graph network: three GPC+SE blocks, edge and node pooling,
/// two dense blocks and a single-logit output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcGcnSeConfig {
    pub n_nodes: usize,
    pub widths: [usize; 3],
    pub se_reduction: usize,
    pub fc: [usize; 2],
}

impl Default for BcGcnSeConfig {
    fn default() -> Self {
        BcGcnSeConfig {
            n_nodes: 132,
            widths: [8, 16, 32],
            se_reduction: 4,
            fc: [32, 8],
        }
    }
}

impl BcGcnSeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 2 {
            return Err(Error::Config("graph needs at least 2 nodes".into()));
        }
        if self.widths.contains(&0) || self.fc.contains(&0) || self.se_reduction == 0 {
            return Err(Error::Config(format!("widths must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        let mut c_in = 1;
        for &c in &self.widths {
            let hidden = c.div_ceil(self.se_reduction);
            total += c * c_in + c + 2 * c * hidden;
            c_in = c;
        }
        let dense = |i: usize, o: usize| i * o + o;
        total + dense(c_in, self.fc[0]) + dense(self.fc[0], self.fc[1]) + dense(self.fc[1], 1)
    }
}

pub fn build_bcgcnse(config: &BcGcnSeConfig, seed: u64) -> Result<ModelGraph> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.n_nodes;
    let mut m = ModelGraph::new(&[1, n, n]);
    let mut c_in = 1;
    for (b, &c) in config.widths.iter().enumerate() {
        m.push(format!("gpc{}", b + 1), Gpc::new(c_in, c, n, &mut rng))?;
        m.push_tap(format!("se{}", b + 1), ChannelSe::new(c, config.se_reduction, &mut rng))?;
        c_in = c;
    }
    m.push("ep", EdgePool::default())?;
    m.push("np", NodePool::default())?;
    m.push("fc1", Dense::new(c_in, config.fc[0], &mut rng))?;
    m.push("relu1", Relu::default())?;
    m.push("fc2", Dense::new(config.fc[0], config.fc[1], &mut rng))?;
    m.push("relu2", Relu::default())?;
    m.push("out", Dense::new(config.fc[1], 1, &mut rng))?;
    Ok(m)
}
