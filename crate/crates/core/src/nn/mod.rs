//! Layer contract, model graph and training primitives.
//!
//! Every layer implements its own forward and backward pass. A
//! [`ModelGraph`] chains layers, sums the final output into a scalar logit and
//! exposes the activations of tapped layers together with the gradient of the
//! logit with respect to them, which is what Grad-CAM consumes.

mod checkpoint;
mod conv;
mod gradcheck;
mod graph;
mod layers;
mod loss;
mod optim;

use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::Rng;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use conv::{conv3d, conv3d_backward, conv_out_len, Conv3d, Gap, MaxPool3d, ResidualBlock};
pub use gradcheck::{grad_check, grad_check_with, GradCheckReport};
pub use graph::{ChannelSe, EdgePool, Gpc, NodePool};
pub use layers::{Dense, Identity, Relu};
pub use loss::{bce_loss, sigmoid};
pub use optim::{Adam, AdamConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A named trainable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: &'static str,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: &'static str, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { name, value, grad }
    }
}

pub trait Layer: Send + Sync + fmt::Debug {
    fn kind(&self) -> &'static str;

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>>;

    /// `graph_input` is the tensor fed to the whole model; graph convolutions
    /// read their base adjacency from it.
    fn forward(&mut self, x: &Tensor, graph_input: &Tensor) -> Result<Tensor>;

    /// Accumulates parameter gradients and, when asked, returns the gradient
    /// with respect to the layer input.
    fn backward(&mut self, grad_out: &Tensor, need_input_grad: bool) -> Result<Option<Tensor>>;

    fn params(&self) -> &[Param] {
        &[]
    }

    /// Fingerprint of the layer's discrete state from the last forward pass
    /// (ReLU masks, pooling arg-max). Finite differences are only valid while
    /// it does not change.
    fn kink_state(&self) -> u64 {
        0
    }

    fn params_mut(&mut self) -> &mut [Param] {
        &mut []
    }

    fn clone_box(&self) -> Box<dyn Layer>;
}

impl Clone for Box<dyn Layer> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    pub layer: Box<dyn Layer>,
    pub tap: bool,
    pub frozen: bool,
    output_shape: Vec<usize>,
}

impl Node {
    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Pre-sigmoid score.
    pub logit: f64,
    /// Activations of the tapped layers, in graph order.
    pub taps: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct BackwardOutput {
    /// d(score)/d(activation) for every tap, in graph order.
    pub tap_grads: Vec<Tensor>,
    /// Present only when the model was asked to track input gradients. The
    /// adjacency that GPC layers read from the model input is held constant,
    /// so for graph models this is the gradient along the feature path only.
    pub input_grad: Option<Tensor>,
}

/// Ordered stack of layers whose final output is summed into a scalar logit.
///
/// A model is exclusively borrowed during forward and backward because layers
/// cache intermediates. Clone it to run on several threads.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    input_shape: Vec<usize>,
    nodes: Vec<Node>,
    forwarded: bool,
    track_input_grad: bool,
}

impl ModelGraph {
    pub fn new(input_shape: &[usize]) -> Self {
        ModelGraph {
            input_shape: input_shape.to_vec(),
            nodes: Vec::new(),
            forwarded: false,
            track_input_grad: false,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, layer: impl Layer + 'static) -> Result<()> {
        self.push_node(name.into(), Box::new(layer), false)
    }

    pub fn push_tap(&mut self, name: impl Into<String>, layer: impl Layer + 'static) -> Result<()> {
        self.push_node(name.into(), Box::new(layer), true)
    }

    fn push_node(&mut self, name: String, layer: Box<dyn Layer>, tap: bool) -> Result<()> {
        if self.nodes.iter().any(|n| n.name == name) {
            return Err(Error::Config(format!("duplicate layer name `{name}`")));
        }
        let input = self.output_shape().to_vec();
        let output_shape = layer.output_shape(&input)?;
        self.nodes.push(Node {
            name,
            layer,
            tap,
            frozen: false,
            output_shape,
        });
        Ok(())
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.nodes
            .last()
            .map(|n| n.output_shape.as_slice())
            .unwrap_or(&self.input_shape)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [Node] {
        &mut self.nodes
    }

    pub fn n_taps(&self) -> usize {
        self.nodes.iter().filter(|n| n.tap).count()
    }

    pub fn tap_shapes(&self) -> Vec<Vec<usize>> {
        self.nodes
            .iter()
            .filter(|n| n.tap)
            .map(|n| n.output_shape.clone())
            .collect()
    }

    pub fn set_track_input_grad(&mut self, on: bool) {
        self.track_input_grad = on;
    }

    /// Marks every node except the listed ones as frozen for the optimizer.
    pub fn freeze_except(&mut self, trainable: &[&str]) {
        for node in &mut self.nodes {
            node.frozen = !trainable.contains(&node.name.as_str());
        }
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<ForwardOutput> {
        input.ensure_shape(&self.input_shape, "model input")?;
        input.ensure_finite("model input")?;
        self.forwarded = false;
        let mut taps = Vec::with_capacity(self.n_taps());
        let mut x = input.clone();
        for node in &mut self.nodes {
            let y = node.layer.forward(&x, input)?;
            debug_assert_eq!(y.shape(), node.output_shape.as_slice(), "{}", node.name);
            y.ensure_finite(&format!("output of layer `{}`", node.name))?;
            if node.tap {
                taps.push(y.clone());
            }
            x = y;
        }
        let logit = x.sum();
        if !logit.is_finite() {
            return Err(Error::NonFinite("model logit".into()));
        }
        self.forwarded = true;
        Ok(ForwardOutput { logit, taps })
    }

    /// Back-propagates `upstream = d(objective)/d(logit)`.
    ///
    /// Parameter gradients accumulate into each [`Param::grad`] until
    /// [`ModelGraph::zero_grad`] is called.
    pub fn backward(&mut self, upstream: f64) -> Result<BackwardOutput> {
        if !self.forwarded {
            let name = self.nodes.last().map(|n| n.name.clone()).unwrap_or_else(|| "<input>".into());
            return Err(Error::BackwardBeforeForward(name));
        }
        let mut grad = Tensor::full(self.output_shape(), upstream);
        let mut tap_grads = Vec::with_capacity(self.n_taps());
        let n = self.nodes.len();
        for (idx, node) in self.nodes.iter_mut().enumerate().rev() {
            if node.tap {
                tap_grads.push(grad.clone());
            }
            let need_input = idx > 0 || self.track_input_grad;
            match node.layer.backward(&grad, need_input)? {
                Some(g) => grad = g,
                None => {
                    debug_assert!(!need_input);
                }
            }
        }
        tap_grads.reverse();
        let input_grad = if self.track_input_grad || n == 0 { Some(grad) } else { None };
        Ok(BackwardOutput {
            tap_grads,
            input_grad,
        })
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            for p in node.layer.params_mut() {
                p.grad.fill(0.0);
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().map(|(_, p)| p.value.len()).sum()
    }

    /// Parameters with qualified `layer.param` names, in graph order.
    pub fn params(&self) -> impl Iterator<Item = (String, &Param)> {
        self.nodes.iter().flat_map(|node| {
            node.layer
                .params()
                .iter()
                .map(move |p| (format!("{}.{}", node.name, p.name), p))
        })
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (String, bool, &mut Param)> {
        self.nodes.iter_mut().flat_map(|node| {
            let frozen = node.frozen;
            let name = node.name.clone();
            node.layer
                .params_mut()
                .iter_mut()
                .map(move |p| (format!("{}.{}", name, p.name), frozen, p))
        })
    }

    pub fn kink_state(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            node.layer.kink_state().hash(&mut h);
        }
        h.finish()
    }

    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params().map(|(_, p)| p.value.clone()).collect()
    }

    pub fn restore(&mut self, values: &[Tensor]) -> Result<()> {
        let count = self.params().count();
        if count != values.len() {
            return Err(Error::Config(format!(
                "snapshot holds {} tensors, model has {count}",
                values.len()
            )));
        }
        for ((name, _, p), v) in self.params_mut().zip(values) {
            v.ensure_shape(p.value.shape(), &name)?;
            p.value = v.clone();
        }
        self.forwarded = false;
        Ok(())
    }
}

pub(crate) fn hash_flags(flags: impl Iterator<Item = bool>) -> u64 {
    let mut h = DefaultHasher::new();
    for f in flags {
        f.hash(&mut h);
    }
    h.finish()
}

/// He-uniform initialisation, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}
