//! Short-time Fourier transform with Hamming windowing.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{FeatureConfig, FeatureError};

/// Symmetric Hamming window.
fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Reflection-pad `signal` by `pad_left` / `pad_right` samples (edge sample
/// excluded from the mirror).
fn reflect_pad(signal: &[f64], pad_left: usize, pad_right: usize) -> Result<Vec<f64>, FeatureError> {
    let len = signal.len();
    let need = pad_left.max(pad_right) + 1;
    if len < need + 1 {
        return Err(FeatureError::SignalTooShort { len, need: need + 1 });
    }
    let mut out = Vec::with_capacity(len + pad_left + pad_right);
    for i in (1..=pad_left).rev() {
        out.push(signal[i]);
    }
    out.extend_from_slice(signal);
    for j in 0..pad_right {
        out.push(signal[len - 2 - j]);
    }
    Ok(out)
}

/// Power spectrogram: one column of `fft_size/2 + 1` bins per frame.
///
/// Frames are `window_ms` long with a `hop_ms` advance, Hamming windowed and
/// zero-padded to `fft_size` points. The signal is center-padded by half a
/// window (reflection), so a 10 s / 48 kHz signal yields exactly 500 frames
/// and a 2 s signal yields 100.
pub fn stft_power(
    signal: &[f64],
    sample_rate: u32,
    config: &FeatureConfig,
) -> Result<DMatrix<f64>, FeatureError> {
    if signal.is_empty() {
        return Err(FeatureError::EmptySignal);
    }
    let window = config.window_samples(sample_rate);
    let hop = config.hop_samples(sample_rate);
    let fft_size = config.fft_size;
    if window > fft_size {
        return Err(FeatureError::WindowExceedsFft { window, fft_size });
    }

    let pad_total = window / 2;
    let pad_left = pad_total / 2;
    let pad_right = pad_total - pad_left;
    let padded = reflect_pad(signal, pad_left, pad_right)?;
    if padded.len() < window {
        return Err(FeatureError::SignalTooShort { len: signal.len(), need: window });
    }
    let n_frames = (padded.len() - window) / hop + 1;
    let n_bins = fft_size / 2 + 1;

    let win = hamming(window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];

    let mut power = DMatrix::zeros(n_bins, n_frames);
    for t in 0..n_frames {
        let start = t * hop;
        for i in 0..window {
            buf[i] = Complex::new(padded[start + i] * win[i], 0.0);
        }
        for b in buf.iter_mut().skip(window) {
            *b = Complex::new(0.0, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        let mut col = power.column_mut(t);
        for k in 0..n_bins {
            col[k] = buf[k].norm_sqr();
        }
    }
    Ok(power)
}
