//! Synthetic labeled scene corpus for desk-scale training and the
//! verification suite.
//!
//! Every class gets a distinct signature: a tone comb on a class-specific
//! fundamental plus band-limited noise in a class-specific band, the band
//! split into two sub-bands that pulse together for even classes and
//! alternately for odd ones, at a class-specific slow rate. Neighboring
//! classes share part of their noise bands. A configurable fraction of
//! clips carries deliberately conflicting cues (`hard_fraction`), which
//! keeps both topologies below saturation so score fusion has room to show
//! its gain. Per-clip gain, fundamental jitter and pulse-rate jitter keep
//! clips within a class varied.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::audio::AudioClip;
use crate::manifest::{DatasetManifest, ManifestEntry, Provenance, Split};
use crate::scenes::{SceneLabel, ALL_SCENES};
use crate::wav::{write_wav, SampleFormat, WavError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub clips_per_class: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub seed: u64,
    /// Per-class fraction of clips tagged `eval` (the rest are `train`).
    pub eval_fraction: f64,
    pub comb_gain: f64,
    pub band_noise_gain: f64,
    pub background_gain: f64,
    /// Relative jitter applied to each clip's fundamental.
    pub f0_jitter: f64,
    /// Relative gain of a second comb borrowed from another class
    /// (0 disables it); clips with a loud distractor are genuinely
    /// ambiguous, which keeps the task from saturating.
    pub distractor_gain: f64,
    /// Fraction of clips rendered with conflicting cues, split evenly
    /// between spectral-hard (wrong-class comb and noise band, true
    /// modulation rate) and temporal-hard (true spectra, wrong-class
    /// modulation). Statistics pooling cannot see modulation rate, so these
    /// clips give the two topologies complementary error patterns.
    pub hard_fraction: f64,
    /// Half-range in semitones of a per-clip global transposition of the
    /// whole signature (comb and noise band together). Frequency-positional
    /// frame statistics suffer under transposition; a convolution over the
    /// frequency axis is largely invariant to it.
    pub transpose_jitter: f64,
    /// Strength of the two within-class variants (comb-dominant versus
    /// noise-dominant clips). Classes become multi-modal in embedding
    /// space, which squeezes the margins of a single-mean cosine backend
    /// while a softmax head is free to carve both modes; 0 disables.
    pub variant_spread: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            clips_per_class: 100,
            duration_s: 2.0,
            sample_rate: 16_000,
            seed: 0,
            eval_fraction: 0.3,
            comb_gain: 0.10,
            band_noise_gain: 0.12,
            background_gain: 0.05,
            f0_jitter: 0.015,
            distractor_gain: 0.0,
            hard_fraction: 0.0,
            transpose_jitter: 0.0,
            variant_spread: 0.0,
        }
    }
}

/// Class fundamental in Hz: ascending by fifths from 120 Hz.
fn fundamental(class: usize) -> f64 {
    120.0 * 2f64.powf(class as f64 * 7.0 / 12.0)
}

/// Sub-band envelopes pulse together for even classes, alternately for odd.
fn antiphase(class: usize) -> bool {
    class % 2 == 1
}

/// Pulse rate in Hz, one per class; slow enough that the in-phase or
/// alternating sub-band patches span many frames.
fn pulse_rate_for(class: usize) -> f64 {
    0.55 + 0.22 * class as f64
}

/// Noise band edges in Hz; adjacent classes overlap, and the band is split
/// at its geometric midpoint into the two pulsing sub-bands.
fn noise_band(class: usize) -> (f64, f64) {
    let lo = 100.0 * 2f64.powf(0.45 * class as f64);
    (lo, lo * 2f64.powf(1.4))
}

/// Smooth pulse in [0.12, 1.0]; the same waveform regardless of phase, so
/// shifting it never changes a band's marginal energy distribution.
fn pulse(theta: f64) -> f64 {
    let s = 0.5 + 0.5 * theta.sin();
    0.12 + 0.88 * s * s
}

/// Band-limited noise via a random-phase spectrum and an inverse FFT,
/// normalized to unit RMS.
fn band_noise(n: usize, sample_rate: u32, lo: f64, hi: f64, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let mut spectrum = vec![Complex::new(0.0, 0.0); n];
    let bin_hz = sample_rate as f64 / n as f64;
    let k_lo = (lo / bin_hz).ceil() as usize;
    let k_hi = ((hi / bin_hz).floor() as usize).min(n / 2 - 1);
    for k in k_lo..=k_hi.max(k_lo) {
        let phase = rng.random_range(0.0..2.0 * PI);
        spectrum[k] = Complex::from_polar(1.0, phase);
        spectrum[n - k] = spectrum[k].conj();
    }
    let fft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    fft.process(&mut spectrum);
    let mut out: Vec<f64> = spectrum.iter().map(|c| c.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

/// Render one clip of a class; fully determined by (config.seed, class, index).
pub fn synthesize_clip(class: usize, index: usize, config: &SynthConfig) -> AudioClip {
    let mut rng = ChaCha12Rng::seed_from_u64(
        config.seed ^ (class as u64) << 32 ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    let n = (config.duration_s * config.sample_rate as f64).round() as usize;
    let dt = 1.0 / config.sample_rate as f64;

    // conflicting-cue styles: spectrum from another class with the true
    // modulation, or true spectrum with another class's modulation
    let style_draw = rng.random_range(0.0..1.0);
    let other_class = (class + 1 + rng.random_range(0..9)) % 10;
    let (spectral_class, temporal_class) = if style_draw < config.hard_fraction / 2.0 {
        (other_class, class)
    } else if style_draw < config.hard_fraction {
        (class, other_class)
    } else {
        (class, class)
    };

    let transpose = if config.transpose_jitter > 0.0 {
        2f64.powf(rng.random_range(-config.transpose_jitter..config.transpose_jitter) / 12.0)
    } else {
        1.0
    };
    let f0 = fundamental(spectral_class)
        * transpose
        * (1.0 + rng.random_range(-config.f0_jitter..config.f0_jitter));
    let mut comb_gain = config.comb_gain * rng.random_range(0.7..1.3);
    let mut noise_gain = config.band_noise_gain * rng.random_range(0.7..1.3);
    if config.variant_spread > 0.0 {
        let s = config.variant_spread;
        if rng.random_range(0.0..1.0) < 0.5 {
            // comb-dominant variant
            comb_gain *= 1.0 + 0.6 * s;
            noise_gain *= 1.0 - 0.65 * s;
        } else {
            // noise-dominant variant
            comb_gain *= 1.0 - 0.5 * s;
            noise_gain *= 1.0 + 0.3 * s;
        }
    }
    let pulse_rate = pulse_rate_for(temporal_class) * rng.random_range(0.85..1.15);
    let pulse_phase = rng.random_range(0.0..2.0 * PI);
    // the co-activation cue: anti-phase sub-bands for odd classes
    let band2_shift = if antiphase(temporal_class) { PI } else { 0.0 };
    let harmonics = [1.0, 0.55, 0.35, 0.2];
    let phases: Vec<f64> =
        (0..harmonics.len()).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    // slight inter-channel imbalance keeps L/R distinct but correlated
    let pan = rng.random_range(-0.2..0.2);

    // a comb borrowed from another class, with a flat envelope
    let distractor_class = (class + 1 + rng.random_range(0..9)) % 10;
    let distractor_f0 = fundamental(distractor_class)
        * (1.0 + rng.random_range(-config.f0_jitter..config.f0_jitter));
    let distractor_gain =
        comb_gain * config.distractor_gain * rng.random_range(0.4..1.0);
    let distractor_phases: Vec<f64> =
        (0..harmonics.len()).map(|_| rng.random_range(0.0..2.0 * PI)).collect();

    let (lo, hi) = noise_band(spectral_class);
    let (lo, hi) = (lo * transpose, hi * transpose);
    let nyquist = config.sample_rate as f64 / 2.0;
    let (lo, hi) = (lo.min(nyquist * 0.9), hi.min(nyquist * 0.95));
    let mid = (lo * hi).sqrt();
    let sub1_l = band_noise(n, config.sample_rate, lo, mid, &mut rng);
    let sub1_r = band_noise(n, config.sample_rate, lo, mid, &mut rng);
    let sub2_l = band_noise(n, config.sample_rate, mid, hi, &mut rng);
    let sub2_r = band_noise(n, config.sample_rate, mid, hi, &mut rng);

    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        let theta = 2.0 * PI * pulse_rate * t + pulse_phase;
        let env1 = pulse(theta);
        let env2 = pulse(theta + band2_shift);
        let mut comb = 0.0;
        let mut distractor = 0.0;
        for (h, &amp) in harmonics.iter().enumerate() {
            let f = f0 * (h + 1) as f64;
            if f < nyquist * 0.95 {
                comb += amp * (2.0 * PI * f * t + phases[h]).sin();
            }
            let fd = distractor_f0 * (h + 1) as f64;
            if fd < nyquist * 0.95 {
                distractor += amp * (2.0 * PI * fd * t + distractor_phases[h]).sin();
            }
        }
        // the comb shares sub-band 1's envelope
        let tone = comb_gain * env1 * comb + distractor_gain * distractor;
        let bg_l: f64 = rng.random_range(-1.0..1.0);
        let bg_r: f64 = rng.random_range(-1.0..1.0);
        left.push(
            tone * (1.0 - pan)
                + noise_gain * (env1 * sub1_l[i] + env2 * sub2_l[i])
                + config.background_gain * bg_l,
        );
        right.push(
            tone * (1.0 + pan)
                + noise_gain * (env1 * sub1_r[i] + env2 * sub2_r[i])
                + config.background_gain * bg_r,
        );
    }

    let mut clip = AudioClip { left, right, sample_rate: config.sample_rate };
    let peak = clip.peak();
    if peak > 0.9 {
        let scale = 0.9 / peak;
        clip.left.iter_mut().for_each(|s| *s *= scale);
        clip.right.iter_mut().for_each(|s| *s *= scale);
    }
    clip
}

/// Write the corpus: WAVs under `out_dir/audio/` plus `manifest.tsv`.
pub fn generate_corpus(
    config: &SynthConfig,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest, SynthError> {
    let out_dir = out_dir.as_ref();
    let audio_dir = out_dir.join("audio");
    std::fs::create_dir_all(&audio_dir)?;

    let n_eval = (config.clips_per_class as f64 * config.eval_fraction).round() as usize;
    let mut entries = Vec::new();
    for scene in ALL_SCENES {
        for i in 0..config.clips_per_class {
            let clip = synthesize_clip(scene.index(), i, config);
            let id = format!("{}-{i:03}", scene.name());
            let path = audio_dir.join(format!("{id}.wav"));
            write_wav(&path, &clip, SampleFormat::Pcm16)?;
            entries.push(ManifestEntry {
                segment_id: id,
                audio_path: path,
                scene_label: scene,
                // the tail of each class is held out
                split: if i >= config.clips_per_class - n_eval {
                    Split::Eval
                } else {
                    Split::Train
                },
                provenance: Provenance::Original,
            });
        }
    }
    let manifest = DatasetManifest { entries };
    manifest
        .save(out_dir.join("manifest.tsv"))
        .map_err(|e| SynthError::Io(std::io::Error::other(e.to_string())))?;
    Ok(manifest)
}

/// In-memory corpus: (clip, label, eval flag) triples, no file I/O.
pub fn generate_clips(config: &SynthConfig) -> Vec<(AudioClip, SceneLabel, bool)> {
    let n_eval = (config.clips_per_class as f64 * config.eval_fraction).round() as usize;
    let mut out = Vec::with_capacity(10 * config.clips_per_class);
    for scene in ALL_SCENES {
        for i in 0..config.clips_per_class {
            let clip = synthesize_clip(scene.index(), i, config);
            let eval = i >= config.clips_per_class - n_eval;
            out.push((clip, scene, eval));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> SynthConfig {
        SynthConfig {
            clips_per_class: 4,
            duration_s: 0.25,
            sample_rate: 8_000,
            seed: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn clips_are_deterministic_and_bounded() {
        let config = tiny_config();
        let a = synthesize_clip(3, 1, &config);
        let b = synthesize_clip(3, 1, &config);
        assert_eq!(a, b);
        assert!(a.peak() <= 0.9 + 1e-12);
        assert_eq!(a.len(), 2000);
        // different index gives different audio
        let c = synthesize_clip(3, 2, &config);
        assert_ne!(a, c);
    }

    #[test]
    fn classes_have_distinct_spectra() {
        // crude check: dominant FFT bins differ between distant classes
        let config = SynthConfig {
            clips_per_class: 1,
            duration_s: 0.5,
            background_gain: 0.0,
            band_noise_gain: 0.0,
            ..tiny_config()
        };
        let peak_bin = |class: usize| {
            let clip = synthesize_clip(class, 0, &config);
            let n = clip.len();
            let mut buf: Vec<Complex<f64>> =
                clip.left.iter().map(|&v| Complex::new(v, 0.0)).collect();
            FftPlanner::new().plan_fft_forward(n).process(&mut buf);
            (0..n / 2).max_by(|&a, &b| buf[a].norm_sqr().total_cmp(&buf[b].norm_sqr())).unwrap()
        };
        let b0 = peak_bin(0);
        let b9 = peak_bin(9);
        assert!(b9 > b0 * 4, "class 9 fundamental should sit far above class 0: {b0} vs {b9}");
    }

    #[test]
    fn corpus_writes_manifest_and_wavs() {
        let dir = std::env::temp_dir().join(format!("sf_synth_{}", std::process::id()));
        let config = tiny_config();
        let manifest = generate_corpus(&config, &dir).unwrap();
        assert_eq!(manifest.len(), 40);
        let evals = manifest.filter_split(Split::Eval);
        assert_eq!(evals.len(), 10); // round(4 * 0.3) = 1 per class
        let loaded = crate::manifest::load_manifest(dir.join("manifest.tsv")).unwrap();
        assert_eq!(loaded.len(), 40);
        let clip = crate::wav::read_wav(&manifest.entries[0].audio_path).unwrap();
        assert_eq!(clip.sample_rate, 8_000);
        std::fs::remove_dir_all(&dir).ok();
    }
}
