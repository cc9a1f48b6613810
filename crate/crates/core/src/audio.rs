//! Stereo audio clips and channel derivation.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("empty clip")]
    EmptyClip,
    #[error("channel length mismatch: left {left}, right {right}")]
    ChannelLengthMismatch { left: usize, right: usize },
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
}

/// A stereo clip: two equal-length sample sequences plus a sample rate.
///
/// Samples are kept as `f64` in (nominally) `[-1, 1]`; integer PCM input is
/// scaled by 1/32768 by the WAV reader.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(left: Vec<f64>, right: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if left.len() != right.len() {
            return Err(AudioError::ChannelLengthMismatch {
                left: left.len(),
                right: right.len(),
            });
        }
        if let Some(i) = left
            .iter()
            .chain(right.iter())
            .position(|s| !s.is_finite())
        {
            return Err(AudioError::NonFiniteSample(i % left.len().max(1)));
        }
        Ok(AudioClip { left, right, sample_rate })
    }

    /// Number of sample frames per channel.
    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    /// Largest absolute sample value across both channels.
    pub fn peak(&self) -> f64 {
        self.left
            .iter()
            .chain(self.right.iter())
            .fold(0.0f64, |m, &s| m.max(s.abs()))
    }
}

/// Channel layout fed to feature extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelMode {
    /// Single mono channel, (L+R)/2.
    M,
    /// Four channels in order L, R, M = L+R, S = L−R.
    Lrms,
}

impl ChannelMode {
    pub fn channel_count(self) -> usize {
        match self {
            ChannelMode::M => 1,
            ChannelMode::Lrms => 4,
        }
    }
}

/// Mono signals derived from a stereo clip under a [`ChannelMode`].
#[derive(Debug, Clone)]
pub struct ChannelSet {
    pub mode: ChannelMode,
    pub signals: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

/// Remove the per-channel DC component.
pub fn zero_mean(clip: &AudioClip) -> Result<AudioClip, AudioError> {
    if clip.is_empty() {
        return Err(AudioError::EmptyClip);
    }
    let center = |xs: &[f64]| {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|&x| x - mean).collect::<Vec<f64>>()
    };
    Ok(AudioClip {
        left: center(&clip.left),
        right: center(&clip.right),
        sample_rate: clip.sample_rate,
    })
}

/// Derive the mono signals for `mode`.
///
/// `M` mode yields one signal `(L+R)/2`; `Lrms` yields `[L, R, L+R, L−R]`.
/// The LRMS mid channel uses the literal sum; the scale difference against
/// mono mode is absorbed by feature standardization downstream.
pub fn derive_channels(clip: &AudioClip, mode: ChannelMode) -> ChannelSet {
    let signals = match mode {
        ChannelMode::M => {
            let mono = clip
                .left
                .iter()
                .zip(&clip.right)
                .map(|(&l, &r)| 0.5 * (l + r))
                .collect();
            vec![mono]
        }
        ChannelMode::Lrms => {
            let mid = clip.left.iter().zip(&clip.right).map(|(&l, &r)| l + r).collect();
            let side = clip.left.iter().zip(&clip.right).map(|(&l, &r)| l - r).collect();
            vec![clip.left.clone(), clip.right.clone(), mid, side]
        }
    };
    ChannelSet { mode, signals, sample_rate: clip.sample_rate }
}
