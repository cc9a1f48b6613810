//! Minimal neural-network engine: the layer set both topologies need,
//! softmax cross-entropy, Adam, and finite-difference gradient verification.
//!
//! All layers implement an explicit backward pass; there is no autodiff.
//! Training math runs at 32-bit, gradient checks instantiate the same
//! generic layer code at 64-bit.

mod adam;
mod conv;
mod gradcheck;
mod layers;
mod loss;
mod tensor;

pub use adam::{Adam, StepOutcome};
pub use conv::{Conv1d, Conv2d};
pub use gradcheck::{grad_check, standard_layer_checks, GradCheckReport};
pub use layers::{
    BatchNorm, Dense, Dropout, GlobalAvgPool2d, MaxPool2d, Relu, Softmax, StatsPool,
};
pub use loss::{cross_entropy, softmax, softmax_cross_entropy};
pub use tensor::{Real, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {layer}: expected {expected}, got {got}")]
    ShapeMismatch { layer: &'static str, expected: String, got: String },
    #[error("batch normalization needs a batch of at least 2 in training mode")]
    BatchTooSmall,
    #[error("pool window {wh}x{ww} larger than input {h}x{w}")]
    PoolWindowTooLarge { wh: usize, ww: usize, h: usize, w: usize },
    #[error("statistics pooling needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("backward called before forward")]
    NoForwardCache,
    #[error("non-finite gradient in parameter {param}")]
    NonFiniteGradient { param: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid label {label} for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Forward-pass mode. Dropout and batch-norm behave differently in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A learnable tensor with its gradient.
#[derive(Debug, Clone)]
pub struct Param<T: Real> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = value.zeros_like();
        Param { value, grad }
    }
}

/// Serializable layer identity: kind plus the shape-determining parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerDesc {
    Conv2d { in_ch: usize, out_ch: usize, kh: usize, kw: usize },
    Conv1d { in_ch: usize, out_ch: usize, k: usize },
    BatchNorm { features: usize },
    Relu,
    MaxPool2d { h: usize, w: usize },
    Dropout { p: f64 },
    GlobalAvgPool2d,
    Dense { inputs: usize, outputs: usize },
    Softmax,
    StatsPool,
}

impl LayerDesc {
    pub fn kind_id(&self) -> u8 {
        match self {
            LayerDesc::Conv2d { .. } => 0,
            LayerDesc::Conv1d { .. } => 1,
            LayerDesc::BatchNorm { .. } => 2,
            LayerDesc::Relu => 3,
            LayerDesc::MaxPool2d { .. } => 4,
            LayerDesc::Dropout { .. } => 5,
            LayerDesc::GlobalAvgPool2d => 6,
            LayerDesc::Dense { .. } => 7,
            LayerDesc::Softmax => 8,
            LayerDesc::StatsPool => 9,
        }
    }
}

/// One layer of a sequential network with an explicit backward pass.
///
/// Tensors move through the chain by value so layers can transform them in
/// place or keep them as the backward cache without copying. `backward`
/// consumes the cache from the most recent training-mode forward call and
/// returns the gradient with respect to that input.
pub trait Layer<T: Real>: Send {
    fn forward(&mut self, input: Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError>;
    fn backward(&mut self, grad_output: Tensor<T>) -> Result<Tensor<T>, NnError>;

    fn descriptor(&self) -> LayerDesc;

    /// Learnable parameters, if any.
    fn params(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }

    /// Non-learnable persistent state (batch-norm running stats).
    fn state(&self) -> Vec<&Tensor<T>> {
        Vec::new()
    }

    fn state_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Vec::new()
    }

    /// Reset any internal RNG stream (dropout masks).
    fn reseed(&mut self, _seed: u64) {}
}
