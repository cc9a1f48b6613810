//! Spectral feature extraction.
//!
//! Both feature kinds share the same front end: zero-mean audio, Hamming
//! windowed STFT (40 ms window, 20 ms hop, 2048-point FFT), then either an
//! 80-band mel filterbank or an 80-band constant-Q filterbank, then log
//! compression with a 1e-10 floor. A 10 s clip yields exactly 500 frames via
//! reflection center-padding by half a window.

mod filterbank;
mod io;
mod stft;

pub use filterbank::{cqt_filterbank, mel_filterbank};
pub use io::{read_feature_map, write_feature_map};
pub use stft::stft_power;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::audio::{derive_channels, zero_mean, AudioClip, AudioError, ChannelMode};

/// Log floor; keeps silence finite.
pub const LOG_EPS: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("empty signal")]
    EmptySignal,
    #[error("signal too short: {len} samples, need at least {need}")]
    SignalTooShort { len: usize, need: usize },
    #[error("window of {window} samples exceeds FFT size {fft_size}")]
    WindowExceedsFft { window: usize, fft_size: usize },
    #[error("shape mismatch: filterbank expects {expected} bins, power matrix has {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("{bands} bands exceed the {bins} usable FFT bins")]
    TooManyBands { bands: usize, bins: usize },
    #[error("CQT band center {center:.1} Hz reaches past Nyquist {nyquist:.1} Hz")]
    CqtExceedsNyquist { center: f64, nyquist: f64 },
    #[error("feature map contains non-finite values")]
    NonFinite,
    #[error("bad feature file: {0}")]
    BadFeatureFile(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which spectral representation a map holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Mel,
    Cqt,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Mel => "mel",
            FeatureKind::Cqt => "cqt",
        }
    }
}

/// STFT / filterbank parameters. Defaults follow the published setup.
#[derive(Debug, Clone)]
pub struct FeatureConfig {
    pub bands: usize,
    pub fft_size: usize,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub cqt_fmin: f64,
    pub cqt_bins_per_octave: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            bands: 80,
            fft_size: 2048,
            window_ms: 40.0,
            hop_ms: 20.0,
            cqt_fmin: 32.70,
            cqt_bins_per_octave: 12,
        }
    }
}

impl FeatureConfig {
    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.window_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop_ms * sample_rate as f64 / 1000.0).round() as usize
    }
}

/// A bands × frames × channels feature tensor (32-bit values, band-major,
/// frame next, channel last).
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub bands: usize,
    pub frames: usize,
    pub channels: usize,
    pub kind: FeatureKind,
    pub mode: ChannelMode,
    pub segment_id: String,
    pub data: Vec<f32>,
}

impl FeatureMap {
    #[inline]
    pub fn at(&self, band: usize, frame: usize, channel: usize) -> f32 {
        self.data[(band * self.frames + frame) * self.channels + channel]
    }

    #[inline]
    pub fn at_mut(&mut self, band: usize, frame: usize, channel: usize) -> &mut f32 {
        &mut self.data[(band * self.frames + frame) * self.channels + channel]
    }

    pub fn with_segment_id(mut self, id: impl Into<String>) -> Self {
        self.segment_id = id.into();
        self
    }
}

/// Apply the log filterbank pipeline: `log(fb · power + ε)`.
pub fn log_mel(
    power: &DMatrix<f64>,
    filterbank: &DMatrix<f64>,
) -> Result<DMatrix<f64>, FeatureError> {
    if filterbank.ncols() != power.nrows() {
        return Err(FeatureError::ShapeMismatch {
            expected: filterbank.ncols(),
            got: power.nrows(),
        });
    }
    let mut out = filterbank * power;
    out.apply(|x| *x = (*x + LOG_EPS).ln());
    Ok(out)
}

/// Log pseudo-CQT of a mono signal: constant-Q filterbank over the power STFT.
pub fn cqt_features(
    signal: &[f64],
    sample_rate: u32,
    config: &FeatureConfig,
) -> Result<DMatrix<f64>, FeatureError> {
    let power = stft_power(signal, sample_rate, config)?;
    let fb = cqt_filterbank(
        config.bands,
        config.fft_size,
        sample_rate,
        config.cqt_fmin,
        config.cqt_bins_per_octave,
    )?;
    log_mel(&power, &fb)
}

/// Log mel spectrogram of a mono signal.
pub fn mel_features(
    signal: &[f64],
    sample_rate: u32,
    config: &FeatureConfig,
) -> Result<DMatrix<f64>, FeatureError> {
    let power = stft_power(signal, sample_rate, config)?;
    let fb = mel_filterbank(config.bands, config.fft_size, sample_rate)?;
    log_mel(&power, &fb)
}

/// Full per-clip pipeline: zero-mean, channel derivation, per-channel
/// spectral extraction, channel stacking.
pub fn extract_features(
    clip: &AudioClip,
    kind: FeatureKind,
    mode: ChannelMode,
) -> Result<FeatureMap, FeatureError> {
    extract_features_with(clip, kind, mode, &FeatureConfig::default())
}

pub fn extract_features_with(
    clip: &AudioClip,
    kind: FeatureKind,
    mode: ChannelMode,
    config: &FeatureConfig,
) -> Result<FeatureMap, FeatureError> {
    let clip = zero_mean(clip)?;
    let set = derive_channels(&clip, mode);
    let mut per_channel = Vec::with_capacity(set.signals.len());
    for signal in &set.signals {
        let mat = match kind {
            FeatureKind::Mel => mel_features(signal, clip.sample_rate, config)?,
            FeatureKind::Cqt => cqt_features(signal, clip.sample_rate, config)?,
        };
        per_channel.push(mat);
    }

    let bands = per_channel[0].nrows();
    let frames = per_channel[0].ncols();
    let channels = per_channel.len();
    let mut data = vec![0.0f32; bands * frames * channels];
    for (c, mat) in per_channel.iter().enumerate() {
        for t in 0..frames {
            for b in 0..bands {
                data[(b * frames + t) * channels + c] = mat[(b, t)] as f32;
            }
        }
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(FeatureError::NonFinite);
    }
    Ok(FeatureMap {
        bands,
        frames,
        channels,
        kind,
        mode,
        segment_id: String::new(),
        data,
    })
}

/// Per-band, per-channel mean/std computed on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub bands: usize,
    pub channels: usize,
    /// Row-major `[band][channel]`.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fit over all frames of the given training maps.
    pub fn fit(maps: &[FeatureMap]) -> Result<Standardizer, FeatureError> {
        let first = maps.first().ok_or(FeatureError::EmptySignal)?;
        let (bands, channels) = (first.bands, first.channels);
        let mut sum = vec![0.0f64; bands * channels];
        let mut sum_sq = vec![0.0f64; bands * channels];
        let mut count = 0u64;
        for map in maps {
            assert_eq!(map.bands, bands, "band count differs across maps");
            assert_eq!(map.channels, channels, "channel count differs across maps");
            for b in 0..bands {
                for t in 0..map.frames {
                    for c in 0..channels {
                        let v = map.at(b, t, c) as f64;
                        sum[b * channels + c] += v;
                        sum_sq[b * channels + c] += v * v;
                    }
                }
            }
            count += map.frames as u64;
        }
        let n = count as f64;
        let mut mean = vec![0.0; bands * channels];
        let mut std = vec![0.0; bands * channels];
        for i in 0..bands * channels {
            mean[i] = sum[i] / n;
            let var = (sum_sq[i] / n - mean[i] * mean[i]).max(0.0);
            std[i] = var.sqrt().max(1e-8);
        }
        Ok(Standardizer { bands, channels, mean, std })
    }

    /// Subtract mean, divide by std, per band and channel.
    pub fn apply(&self, map: &FeatureMap) -> FeatureMap {
        assert_eq!(map.bands, self.bands);
        assert_eq!(map.channels, self.channels);
        let mut out = map.clone();
        for b in 0..map.bands {
            for t in 0..map.frames {
                for c in 0..map.channels {
                    let i = b * self.channels + c;
                    *out.at_mut(b, t, c) =
                        ((map.at(b, t, c) as f64 - self.mean[i]) / self.std[i]) as f32;
                }
            }
        }
        out
    }
}
