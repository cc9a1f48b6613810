//! Triangular filterbanks: mel-scale and constant-Q spacing.

use nalgebra::DMatrix;

use super::FeatureError;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10.0f64.powf(m / 2595.0) - 1.0)
}

/// Mel filterbank: `num_bands` triangles with centers uniform on the mel
/// scale between 0 Hz and Nyquist. Filters are not area-normalized.
pub fn mel_filterbank(
    num_bands: usize,
    fft_size: usize,
    sample_rate: u32,
) -> Result<DMatrix<f64>, FeatureError> {
    let n_bins = fft_size / 2 + 1;
    if num_bands == 0 || num_bands + 2 > n_bins {
        return Err(FeatureError::TooManyBands { bands: num_bands, bins: n_bins });
    }
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    // band edges: num_bands + 2 points, uniform in mel
    let edges: Vec<f64> = (0..num_bands + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (num_bands + 1) as f64))
        .collect();

    let bin_hz = sample_rate as f64 / fft_size as f64;
    let mut fb = DMatrix::zeros(num_bands, n_bins);
    for band in 0..num_bands {
        let (lo, center, hi) = (edges[band], edges[band + 1], edges[band + 2]);
        for bin in 0..n_bins {
            let f = bin as f64 * bin_hz;
            let w = if f <= center {
                (f - lo) / (center - lo)
            } else {
                (hi - f) / (hi - center)
            };
            if w > 0.0 {
                fb[(band, bin)] = w;
            }
        }
    }
    Ok(fb)
}

/// Frequencies of the CQT band centers: `fmin * 2^(k / bins_per_octave)`.
pub fn cqt_center_frequencies(num_bands: usize, fmin: f64, bins_per_octave: usize) -> Vec<f64> {
    (0..num_bands)
        .map(|k| fmin * 2f64.powf(k as f64 / bins_per_octave as f64))
        .collect()
}

/// Constant-Q filterbank over FFT bins: geometrically spaced triangles.
///
/// Low bands are narrower than the FFT bin spacing; their half-widths are
/// widened to one bin so every filter keeps support on at least one bin.
pub fn cqt_filterbank(
    num_bands: usize,
    fft_size: usize,
    sample_rate: u32,
    fmin: f64,
    bins_per_octave: usize,
) -> Result<DMatrix<f64>, FeatureError> {
    let n_bins = fft_size / 2 + 1;
    if num_bands == 0 || num_bands > n_bins {
        return Err(FeatureError::TooManyBands { bands: num_bands, bins: n_bins });
    }
    let nyquist = sample_rate as f64 / 2.0;
    let centers = cqt_center_frequencies(num_bands, fmin, bins_per_octave);
    let top = centers[num_bands - 1];
    if top >= nyquist {
        return Err(FeatureError::CqtExceedsNyquist { center: top, nyquist });
    }

    let ratio = 2f64.powf(1.0 / bins_per_octave as f64);
    let bin_hz = sample_rate as f64 / fft_size as f64;
    let mut fb = DMatrix::zeros(num_bands, n_bins);
    for band in 0..num_bands {
        let center = centers[band];
        let half_left = (center - center / ratio).max(bin_hz);
        let half_right = (center * ratio - center).max(bin_hz);
        for bin in 0..n_bins {
            let f = bin as f64 * bin_hz;
            let w = if f <= center {
                1.0 - (center - f) / half_left
            } else {
                1.0 - (f - center) / half_right
            };
            if w > 0.0 {
                fb[(band, bin)] = w;
            }
        }
    }
    Ok(fb)
}
