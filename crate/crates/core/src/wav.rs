//! Minimal RIFF/WAVE reader and writer.
//!
//! Supports PCM 16-bit and IEEE float 32-bit, mono or stereo. Integer PCM is
//! scaled by 1/32768 on read; mono input is duplicated to both channels.
//! Unknown chunks are skipped so files with LIST/fact metadata load fine.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::audio::AudioClip;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("truncated WAV data: expected {expected} bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Sample encoding for [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn read_u16(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Read a WAV file into a stereo [`AudioClip`].
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, WavError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_wav(&bytes)
}

/// Decode WAV bytes into a stereo [`AudioClip`].
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, WavError> {
    if bytes.len() < 12 {
        return Err(WavError::MalformedHeader("file shorter than RIFF header".into()));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(WavError::MalformedHeader("missing RIFF magic".into()));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(WavError::MalformedHeader("missing WAVE form type".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<(usize, usize)> = None; // (offset, declared length)

    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(WavError::MalformedHeader("fmt chunk too short".into()));
                }
                let mut format = read_u16(bytes, body);
                let channels = read_u16(bytes, body + 2);
                let rate = read_u32(bytes, body + 4);
                let bits = read_u16(bytes, body + 14);
                if format == FORMAT_EXTENSIBLE && size >= 40 && body + 26 <= bytes.len() {
                    // WAVE_FORMAT_EXTENSIBLE: actual format is the first u16 of the GUID
                    format = read_u16(bytes, body + 24);
                }
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => {
                data = Some((body, size));
                // do not read past here; data length is validated below
            }
            _ => {}
        }
        // chunks are word-aligned
        pos = body + size + (size & 1);
    }

    let (format, channels, sample_rate, bits) =
        fmt.ok_or_else(|| WavError::MalformedHeader("missing fmt chunk".into()))?;
    let (data_at, data_len) =
        data.ok_or_else(|| WavError::MalformedHeader("missing data chunk".into()))?;

    if sample_rate == 0 {
        return Err(WavError::MalformedHeader("zero sample rate".into()));
    }
    if channels == 0 || channels > 2 {
        return Err(WavError::UnsupportedEncoding(format!("{channels} channels")));
    }
    let bytes_per_sample = match (format, bits) {
        (FORMAT_PCM, 16) => 2,
        (FORMAT_IEEE_FLOAT, 32) => 4,
        _ => {
            return Err(WavError::UnsupportedEncoding(format!(
                "format tag {format} at {bits} bits"
            )))
        }
    };

    let available = bytes.len().saturating_sub(data_at);
    if data_len > available {
        return Err(WavError::TruncatedData { expected: data_len, found: available });
    }
    let frame_bytes = bytes_per_sample * channels as usize;
    if data_len % frame_bytes != 0 {
        return Err(WavError::TruncatedData {
            expected: data_len + frame_bytes - data_len % frame_bytes,
            found: data_len,
        });
    }

    let n_frames = data_len / frame_bytes;
    let mut left = Vec::with_capacity(n_frames);
    let mut right = Vec::with_capacity(n_frames);
    let payload = &bytes[data_at..data_at + data_len];

    for frame in 0..n_frames {
        let at = frame * frame_bytes;
        let decode = |o: usize| -> f64 {
            match bytes_per_sample {
                2 => i16::from_le_bytes([payload[o], payload[o + 1]]) as f64 / 32768.0,
                _ => f32::from_le_bytes([
                    payload[o],
                    payload[o + 1],
                    payload[o + 2],
                    payload[o + 3],
                ]) as f64,
            }
        };
        let l = decode(at);
        let r = if channels == 2 { decode(at + bytes_per_sample) } else { l };
        left.push(l);
        right.push(r);
    }

    AudioClip::new(left, right, sample_rate)
        .map_err(|e| WavError::MalformedHeader(format!("invalid audio payload: {e}")))
}

/// Write a stereo clip as a WAV file.
pub fn write_wav(
    path: impl AsRef<Path>,
    clip: &AudioClip,
    format: SampleFormat,
) -> Result<(), WavError> {
    let bytes = encode_wav(clip, format);
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Encode a stereo clip as WAV bytes.
pub fn encode_wav(clip: &AudioClip, format: SampleFormat) -> Vec<u8> {
    let n = clip.len();
    let channels = 2u16;
    let (format_tag, bits): (u16, u16) = match format {
        SampleFormat::Pcm16 => (FORMAT_PCM, 16),
        SampleFormat::Float32 => (FORMAT_IEEE_FLOAT, 32),
    };
    let block_align = channels * bits / 8;
    let byte_rate = clip.sample_rate * block_align as u32;
    let data_len = n * block_align as usize;
    let use_fact = format == SampleFormat::Float32;
    let fact_len = if use_fact { 12 } else { 0 };
    let riff_len = 4 + 24 + fact_len + 8 + data_len;

    let mut out = Vec::with_capacity(riff_len + 8);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(riff_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format_tag.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    if use_fact {
        out.extend_from_slice(b"fact");
        out.extend_from_slice(&4u32.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());

    for i in 0..n {
        for sample in [clip.left[i], clip.right[i]] {
            match format {
                SampleFormat::Pcm16 => {
                    let q = (sample * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    out.extend_from_slice(&q.to_le_bytes());
                }
                SampleFormat::Float32 => {
                    out.extend_from_slice(&(sample as f32).to_le_bytes());
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Independent golden encoder: bytes assembled by hand, no shared code
    /// with `encode_wav`.
    fn golden_pcm16_stereo(samples: &[(i16, i16)], rate: u32) -> Vec<u8> {
        let data_len = samples.len() * 4;
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
        b.extend_from_slice(b"WAVE");
        b.extend_from_slice(b"fmt ");
        b.extend_from_slice(&[16, 0, 0, 0]);
        b.extend_from_slice(&[1, 0]); // PCM
        b.extend_from_slice(&[2, 0]); // stereo
        b.extend_from_slice(&rate.to_le_bytes());
        b.extend_from_slice(&(rate * 4).to_le_bytes());
        b.extend_from_slice(&[4, 0]); // block align
        b.extend_from_slice(&[16, 0]); // bits
        b.extend_from_slice(b"data");
        b.extend_from_slice(&(data_len as u32).to_le_bytes());
        for &(l, r) in samples {
            b.extend_from_slice(&l.to_le_bytes());
            b.extend_from_slice(&r.to_le_bytes());
        }
        b
    }

    #[test]
    fn one_second_of_silence() {
        let samples = vec![(0i16, 0i16); 48000];
        let clip = decode_wav(&golden_pcm16_stereo(&samples, 48000)).unwrap();
        assert_eq!(clip.len(), 48000);
        assert_eq!(clip.sample_rate, 48000);
        assert!(clip.left.iter().chain(clip.right.iter()).all(|&s| s == 0.0));
    }

    #[test]
    fn pcm16_negative_full_scale_maps_to_minus_one() {
        let clip = decode_wav(&golden_pcm16_stereo(&[(-32768, 32767)], 48000)).unwrap();
        assert_eq!(clip.left[0], -1.0);
        assert_eq!(clip.right[0], 32767.0 / 32768.0);
    }

    #[test]
    fn mono_input_duplicates_channels() {
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36u32 + 4).to_le_bytes());
        b.extend_from_slice(b"WAVE");
        b.extend_from_slice(b"fmt ");
        b.extend_from_slice(&[16, 0, 0, 0]);
        b.extend_from_slice(&[1, 0, 1, 0]); // PCM, mono
        b.extend_from_slice(&16000u32.to_le_bytes());
        b.extend_from_slice(&32000u32.to_le_bytes());
        b.extend_from_slice(&[2, 0, 16, 0]);
        b.extend_from_slice(b"data");
        b.extend_from_slice(&4u32.to_le_bytes());
        b.extend_from_slice(&100i16.to_le_bytes());
        b.extend_from_slice(&(-200i16).to_le_bytes());
        let clip = decode_wav(&b).unwrap();
        assert_eq!(clip.left, clip.right);
        assert_eq!(clip.left[0], 100.0 / 32768.0);
        assert_eq!(clip.left[1], -200.0 / 32768.0);
    }

    #[test]
    fn error_values_are_distinct() {
        // malformed magic
        assert!(matches!(decode_wav(b"RIFX....WAVE"), Err(WavError::MalformedHeader(_))));
        // unsupported bit depth
        let mut b = golden_pcm16_stereo(&[(0, 0)], 48000);
        b[34] = 24; // bits per sample
        assert!(matches!(decode_wav(&b), Err(WavError::UnsupportedEncoding(_))));
        // truncated data chunk
        let mut b = golden_pcm16_stereo(&[(0, 0), (1, 1)], 48000);
        b.truncate(b.len() - 3);
        // keep declared size larger than available payload
        assert!(matches!(decode_wav(&b), Err(WavError::TruncatedData { .. })));
    }

    #[test]
    fn skips_unknown_chunks() {
        let golden = golden_pcm16_stereo(&[(7, -7)], 44100);
        // splice a LIST chunk between fmt and data
        let mut b = golden[..36].to_vec();
        b.extend_from_slice(b"LIST");
        b.extend_from_slice(&6u32.to_le_bytes());
        b.extend_from_slice(b"INFOab");
        b.extend_from_slice(&golden[36..]);
        let riff_len = (b.len() - 8) as u32;
        b[4..8].copy_from_slice(&riff_len.to_le_bytes());
        let clip = decode_wav(&b).unwrap();
        assert_eq!(clip.left[0], 7.0 / 32768.0);
    }

    #[test]
    fn round_trip_pcm16_within_quantization_step() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let n = 4800; // 0.1 s at 48 kHz
        let left: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let right: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let clip = AudioClip::new(left, right, 48000).unwrap();
        let back = decode_wav(&encode_wav(&clip, SampleFormat::Pcm16)).unwrap();
        for i in 0..n {
            assert!((back.left[i] - clip.left[i]).abs() <= 1.0 / 32768.0);
            assert!((back.right[i] - clip.right[i]).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn round_trip_float32_is_exact_at_f32() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(12);
        let n = 1000;
        let left: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0f32..1.0) as f64).collect();
        let right: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0f32..1.0) as f64).collect();
        let clip = AudioClip::new(left.clone(), right, 22050).unwrap();
        let back = decode_wav(&encode_wav(&clip, SampleFormat::Float32)).unwrap();
        assert_eq!(back.left, clip.left);
        assert_eq!(back.right, clip.right);
    }
}
