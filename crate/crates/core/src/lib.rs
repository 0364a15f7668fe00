//! Explainable Alzheimer's classification from connectivity matrices and
//! volumetric scans: graph and 3-D convolutional classifiers trained with
//! hand-written backpropagation, Grad-CAM relevance maps reduced to atlas
//! parcels, and the statistics that compare those parcels between classes.

pub mod cli;
pub mod data;
pub mod error;
pub mod models;
pub mod nn;
pub mod preprocess;
pub mod report;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod xai;

pub use error::{Error, Result};
pub use tensor::Tensor;
