//! # scene-forge
//!
//! An acoustic scene classification pipeline, self-contained and trainable at
//! desk scale:
//!
//! - WAV ingestion, channel derivation (mono / L-R-M-S) and dataset manifests
//! - log mel-spectrogram and pseudo-CQT feature extraction (80 bands)
//! - same-scene mixing augmentation
//! - a small CNN engine with manual backprop, Adam and gradient checking
//! - the two published topologies: a 2-D image-style CNN and a 1-D x-vector
//!   extractor with statistics pooling
//! - regularized LDA with cosine scoring over x-vectors
//! - score fusion (averaging / multiclass logistic regression) and accuracy
//!   reports
//!
//! The `scene-forge` CLI (crate `scene-forge-cli`) orchestrates these stages
//! over feature/checkpoint/score files; everything here is also usable as a
//! library.

pub mod audio;
pub mod augment;
pub mod features;
pub mod fusion;
pub mod manifest;
pub mod models;
pub mod nn;
pub mod rlda;
pub mod scenes;
pub mod synth;
pub mod wav;

pub use audio::{derive_channels, zero_mean, AudioClip, ChannelMode, ChannelSet};
pub use features::{extract_features, FeatureKind, FeatureMap};
pub use manifest::{DatasetManifest, ManifestEntry, Provenance, Split};
pub use scenes::{SceneLabel, NUM_SCENES};
