//! The two network topologies and their training schedule.
//!
//! `Cnn2d` is the image-style network: three Conv2D–BN–ReLU–MaxPool–Dropout
//! blocks (32/64/128 filters, 7×11 kernels, pools (2,10), (2,5), (5,·)),
//! global average pooling over the remaining frequency positions, batch norm
//! and a Dense-10 softmax head. The last pool spans the entire remaining
//! time axis, so its time window scales with the input frame count.
//!
//! `Xvec1d` runs 1-D convolutions along time over 80 input bands
//! (kernels 3, 3, 5, 1, 1 with 128/128/128/128/256 filters, ReLU then BN),
//! statistics pooling to 512 values, then Dense-128 (the x-vector tap),
//! Dense-128 and Dense-10.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use train::{
    train, EarlyStopSchedule, EpochRecord, LabeledSet, ScheduleAction, TrainConfig, TrainHistory,
};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::features::FeatureMap;
use crate::nn::{
    softmax, BatchNorm, Conv1d, Conv2d, Dense, Dropout, GlobalAvgPool2d, Layer, LayerDesc,
    MaxPool2d, Mode, NnError, Param, Relu, StatsPool, Tensor,
};
use crate::nn::Real;
use crate::scenes::{ScoreVector, NUM_SCENES};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid topology combination: {0}")]
    InvalidCombination(String),
    #[error("feature map is {got} channels, model expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("feature map is {got_bands}x{got_frames}, model expects {bands}x{frames}")]
    SizeMismatch { bands: usize, frames: usize, got_bands: usize, got_frames: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Cnn2d,
    Xvec1d,
}

impl Topology {
    pub fn name(self) -> &'static str {
        match self {
            Topology::Cnn2d => "cnn2d",
            Topology::Xvec1d => "xvec1d",
        }
    }

    pub fn parse(s: &str) -> Option<Topology> {
        match s {
            "cnn2d" => Some(Topology::Cnn2d),
            "xvec1d" => Some(Topology::Xvec1d),
            _ => None,
        }
    }
}

/// A sequential network with an optional embedding tap.
pub struct Model<T: Real> {
    pub topology: Topology,
    pub input_channels: usize,
    pub bands: usize,
    pub frames: usize,
    layers: Vec<Box<dyn Layer<T>>>,
    /// Index of the layer whose output is the x-vector (inclusive).
    xvector_tap: Option<usize>,
}

/// Snapshot of every learnable parameter and running statistic.
#[derive(Clone)]
pub struct ModelSnapshot<T: Real> {
    params: Vec<Tensor<T>>,
    state: Vec<Tensor<T>>,
}

/// Dimension of the x-vector embedding.
pub const XVECTOR_DIM: usize = 128;

/// Build a topology for the given input geometry.
///
/// `Cnn2d` accepts 1 or 4 input channels; `Xvec1d` accepts single-channel
/// maps only. Parameter shapes are validated by a forward shape trace on a
/// dummy input before the model is returned.
pub fn build_model<T: Real>(
    topology: Topology,
    input_channels: usize,
    bands: usize,
    frames: usize,
    seed: u64,
) -> Result<Model<T>, ModelError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut layers: Vec<Box<dyn Layer<T>>> = Vec::new();
    let mut xvector_tap = None;

    match topology {
        Topology::Cnn2d => {
            if input_channels != 1 && input_channels != 4 {
                return Err(ModelError::InvalidCombination(format!(
                    "cnn2d takes 1 or 4 channels, got {input_channels}"
                )));
            }
            if bands / 2 / 2 / 5 == 0 || frames / 10 / 5 == 0 {
                return Err(ModelError::InvalidCombination(format!(
                    "cnn2d needs at least 20 bands and 50 frames, got {bands}x{frames}"
                )));
            }
            // the final pool consumes the whole remaining time axis
            let t3 = frames / 10 / 5;
            let blocks: [(usize, usize, (usize, usize)); 3] = [
                (input_channels, 32, (2, 10)),
                (32, 64, (2, 5)),
                (64, 128, (5, t3)),
            ];
            for (i, &(in_ch, out_ch, pool)) in blocks.iter().enumerate() {
                layers.push(Box::new(Conv2d::new(in_ch, out_ch, 7, 11, &mut rng)));
                layers.push(Box::new(BatchNorm::new(out_ch)));
                layers.push(Box::new(Relu::new()));
                layers.push(Box::new(MaxPool2d::new(pool.0, pool.1)));
                layers.push(Box::new(Dropout::new(0.3, seed.wrapping_add(i as u64 + 1))));
            }
            layers.push(Box::new(GlobalAvgPool2d::new()));
            layers.push(Box::new(BatchNorm::new(128)));
            layers.push(Box::new(Dense::new(128, NUM_SCENES, &mut rng)));
        }
        Topology::Xvec1d => {
            if input_channels != 1 {
                return Err(ModelError::InvalidCombination(format!(
                    "xvec1d takes single-channel features, got {input_channels} channels"
                )));
            }
            if frames < 2 {
                return Err(ModelError::InvalidCombination(format!(
                    "xvec1d needs at least 2 frames, got {frames}"
                )));
            }
            let convs: [(usize, usize, usize); 5] = [
                (bands, 128, 3),
                (128, 128, 3),
                (128, 128, 5),
                (128, 128, 1),
                (128, 256, 1),
            ];
            for (i, &(in_ch, out_ch, k)) in convs.iter().enumerate() {
                layers.push(Box::new(Conv1d::new(in_ch, out_ch, k, &mut rng)));
                layers.push(Box::new(Relu::new()));
                layers.push(Box::new(BatchNorm::new(out_ch)));
                if i < 4 {
                    layers.push(Box::new(Dropout::new(0.15, seed.wrapping_add(i as u64 + 1))));
                }
            }
            layers.push(Box::new(StatsPool::new()));
            layers.push(Box::new(Dense::new(512, XVECTOR_DIM, &mut rng)));
            xvector_tap = Some(layers.len() - 1);
            layers.push(Box::new(Relu::new()));
            layers.push(Box::new(BatchNorm::new(XVECTOR_DIM)));
            layers.push(Box::new(Dropout::new(0.15, seed.wrapping_add(5))));
            layers.push(Box::new(Dense::new(XVECTOR_DIM, XVECTOR_DIM, &mut rng)));
            layers.push(Box::new(Relu::new()));
            layers.push(Box::new(BatchNorm::new(XVECTOR_DIM)));
            layers.push(Box::new(Dense::new(XVECTOR_DIM, NUM_SCENES, &mut rng)));
        }
    }

    let mut model =
        Model { topology, input_channels, bands, frames, layers, xvector_tap };
    // shape trace on a dummy two-item batch (batch norm needs ≥ 2)
    let dummy = Tensor::zeros(&model.input_shape(2));
    let logits = model.forward_logits(dummy, Mode::Train)?;
    if logits.shape != [2, NUM_SCENES] {
        return Err(ModelError::InvalidCombination(format!(
            "shape trace produced {:?}",
            logits.shape
        )));
    }
    Ok(model)
}

impl<T: Real> Model<T> {
    /// Batched input shape for this topology.
    pub fn input_shape(&self, batch: usize) -> Vec<usize> {
        match self.topology {
            Topology::Cnn2d => vec![batch, self.input_channels, self.bands, self.frames],
            Topology::Xvec1d => vec![batch, self.bands, self.frames],
        }
    }

    /// Run all layers; output is the 10-way logit tensor.
    pub fn forward_logits(&mut self, input: Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let mut x = input;
        for layer in self.layers.iter_mut() {
            x = layer.forward(x, mode)?;
        }
        Ok(x)
    }

    /// Backpropagate the logit gradient through every layer.
    pub fn backward(&mut self, grad_logits: Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut g = grad_logits;
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(g)?;
        }
        Ok(g)
    }

    pub fn params(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params()).collect()
    }

    pub fn descriptors(&self) -> Vec<LayerDesc> {
        self.layers.iter().map(|l| l.descriptor()).collect()
    }

    pub fn state_tensors(&self) -> Vec<Tensor<T>> {
        self.layers.iter().flat_map(|l| l.state()).cloned().collect()
    }

    pub fn state_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.state_mut()).collect()
    }

    pub fn snapshot(&mut self) -> ModelSnapshot<T> {
        let params = self.layers.iter_mut().flat_map(|l| l.params()).map(|p| p.value.clone()).collect();
        let state = self.layers.iter().flat_map(|l| l.state()).cloned().collect();
        ModelSnapshot { params, state }
    }

    pub fn restore(&mut self, snapshot: &ModelSnapshot<T>) {
        for (p, saved) in self
            .layers
            .iter_mut()
            .flat_map(|l| l.params())
            .zip(&snapshot.params)
        {
            p.value = saved.clone();
        }
        for (s, saved) in self
            .layers
            .iter_mut()
            .flat_map(|l| l.state_mut())
            .zip(&snapshot.state)
        {
            *s = saved.clone();
        }
    }

    /// Reset every dropout stream, deriving one sub-seed per layer index.
    pub fn reseed_dropout(&mut self, seed: u64) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.reseed(seed ^ ((i as u64 + 1) << 32));
        }
    }

    /// Convert a feature map into this model's per-item input tensor.
    pub fn input_from_features(&self, map: &FeatureMap) -> Result<Tensor<T>, ModelError> {
        if map.channels != self.input_channels {
            return Err(ModelError::ChannelMismatch {
                expected: self.input_channels,
                got: map.channels,
            });
        }
        if map.bands != self.bands || map.frames != self.frames {
            return Err(ModelError::SizeMismatch {
                bands: self.bands,
                frames: self.frames,
                got_bands: map.bands,
                got_frames: map.frames,
            });
        }
        let t = match self.topology {
            Topology::Cnn2d => {
                let mut t = Tensor::zeros(&[map.channels, map.bands, map.frames]);
                for c in 0..map.channels {
                    for b in 0..map.bands {
                        for f in 0..map.frames {
                            t.data[(c * map.bands + b) * map.frames + f] =
                                T::of(map.at(b, f, c) as f64);
                        }
                    }
                }
                t
            }
            Topology::Xvec1d => {
                // bands become input channels; convolution runs along time
                let mut t = Tensor::zeros(&[map.bands, map.frames]);
                for b in 0..map.bands {
                    for f in 0..map.frames {
                        t.data[b * map.frames + f] = T::of(map.at(b, f, 0) as f64);
                    }
                }
                t
            }
        };
        Ok(t)
    }

    /// Inference-mode posteriors for a batch of per-item tensors.
    pub fn predict_batch(&mut self, items: &[Tensor<T>]) -> Result<Vec<ScoreVector>, ModelError> {
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(64) {
            let batch = Tensor::stack(chunk);
            let logits = self.forward_logits(batch, Mode::Eval)?;
            for bi in 0..chunk.len() {
                let row: Vec<f64> = logits.item(bi).iter().map(|v| v.to_f64()).collect();
                let probs = softmax(&row);
                let mut sv = [0.0; NUM_SCENES];
                sv.copy_from_slice(&probs);
                out.push(sv);
            }
        }
        Ok(out)
    }

    /// Posteriors for one feature map.
    pub fn predict(&mut self, map: &FeatureMap) -> Result<ScoreVector, ModelError> {
        let item = self.input_from_features(map)?;
        Ok(self.predict_batch(&[item])?.remove(0))
    }

    /// The 128-dim embeddings: pre-activation output of the first dense
    /// layer after statistics pooling, inference mode.
    pub fn extract_xvectors(&mut self, items: &[Tensor<T>]) -> Result<Vec<Vec<f64>>, ModelError> {
        let tap = self.xvector_tap.ok_or_else(|| {
            ModelError::InvalidCombination("x-vectors require the xvec1d topology".into())
        })?;
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(64) {
            let mut x = Tensor::stack(chunk);
            for layer in self.layers[..=tap].iter_mut() {
                x = layer.forward(x, Mode::Eval)?;
            }
            for bi in 0..chunk.len() {
                out.push(x.item(bi).iter().map(|v| v.to_f64()).collect());
            }
        }
        Ok(out)
    }

    pub fn extract_xvector(&mut self, map: &FeatureMap) -> Result<Vec<f64>, ModelError> {
        let item = self.input_from_features(map)?;
        Ok(self.extract_xvectors(&[item])?.remove(0))
    }
}
