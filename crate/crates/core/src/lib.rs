//! Optimization-based neural style transfer.
//!
//! The engine optimizes an image in pixel space so that its activations in a
//! fixed convolutional loss network match a content image, while Gram-matrix
//! (or spatial-average) statistics match a style image. A total-variation term
//! keeps the result spatially smooth.

pub mod config;
pub mod error;
pub mod experiments;
pub mod fixtures;
pub mod imaging;
pub mod network;
pub mod objective;
pub mod optimize;
pub mod tensor;

pub use config::{ConfigOverrides, InitMode, OptimizerKind, TransferConfig};
pub use error::{Error, Result};
pub use experiments::{
    builtin_sweeps, recommended_preset, run_sweep, SweepParameter, SweepResult, SweepSpec,
};
pub use network::{FeatureSet, LayerKind, LayerSpec, LinkedFeatures, LossNetwork};
pub use objective::{LossReport, StyleMode, StyleTarget};
pub use tensor::{Gradients, Graph, Tensor, Var};
