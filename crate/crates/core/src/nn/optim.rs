use serde::{Deserialize, Serialize};

use super::ModelGraph;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments. State is created lazily on first step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.first, &self.second)
    }

    /// One update of `params` in place; `frozen[i]` skips the update but still
    /// advances that tensor's moments.
    pub fn step_tensors(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor], frozen: &[bool]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Config(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len() {
            return Err(Error::Config("optimizer state does not match parameter list".into()));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.first[i].shape() != g.shape() {
                return Err(Error::shape("adam parameter", p.shape(), g.shape()));
            }
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let skip = frozen.get(i).copied().unwrap_or(false);
            for (((pj, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mj = beta1 * *mj + (1.0 - beta1) * gj;
                *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
                if !skip {
                    *pj -= lr * (*mj / c1) / ((*vj / c2).sqrt() + eps);
                }
            }
        }
        Ok(())
    }

    /// Applies accumulated gradients scaled by `grad_scale` (e.g. 1/batch).
    pub fn step(&mut self, model: &mut ModelGraph, grad_scale: f64) -> Result<()> {
        let mut values = Vec::new();
        let mut grads = Vec::new();
        let mut frozen = Vec::new();
        for (_, is_frozen, p) in model.params_mut() {
            grads.push(p.grad.scale(grad_scale));
            frozen.push(is_frozen);
            values.push(&mut p.value);
        }
        let grad_refs: Vec<&Tensor> = grads.iter().collect();
        self.step_tensors(&mut values, &grad_refs, &frozen)
    }
}
