//! Same-scene mixing augmentation.
//!
//! Each training segment spawns additional segments formed as a weighted sum
//! of the segment and a few other randomly chosen segments from the same
//! scene, tripling the training data at the default two clips per segment.
//! Per-segment RNG streams are derived by hashing (seed, segment_id), so
//! results are independent of worker scheduling.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::manifest::{DatasetManifest, ManifestEntry, Provenance, Split};
use crate::wav::{read_wav, write_wav, SampleFormat, WavError};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("clip length mismatch: {0} vs {1} samples")]
    LengthMismatch(usize, usize),
    #[error("sample rate mismatch: {0} vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("weights must have length {expected}, got {got}")]
    WeightCountMismatch { expected: usize, got: usize },
    #[error("weights must be nonnegative and sum to 1 (sum = {0})")]
    BadWeights(f64),
    #[error("scene {scene} has only {count} segments, need at least {need} for k up to {k_max}")]
    ClassTooSmall { scene: String, count: usize, need: usize, k_max: usize },
    #[error("manifest contains non-train split {0}; only train manifests may be augmented")]
    NonTrainSplit(String),
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct AugmentConfig {
    /// New segments generated per original segment.
    pub clips_per_segment: usize,
    /// Number of extra same-scene clips mixed in: uniform in `k_min..=k_max`.
    pub k_min: usize,
    pub k_max: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { clips_per_segment: 2, k_min: 1, k_max: 3, seed: 0 }
    }
}

/// Samplewise convex combination of clips.
///
/// Weights must be nonnegative and sum to one within 1e-9, with
/// `weights[0]` belonging to `primary`. If the mix clips, it is peak
/// renormalized to 0.95 rather than clamped.
pub fn mix_clips(
    primary: &AudioClip,
    others: &[&AudioClip],
    weights: &[f64],
) -> Result<AudioClip, AugmentError> {
    if weights.len() != others.len() + 1 {
        return Err(AugmentError::WeightCountMismatch {
            expected: others.len() + 1,
            got: weights.len(),
        });
    }
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(AugmentError::BadWeights(sum));
    }
    for other in others {
        if other.len() != primary.len() {
            return Err(AugmentError::LengthMismatch(primary.len(), other.len()));
        }
        if other.sample_rate != primary.sample_rate {
            return Err(AugmentError::SampleRateMismatch(primary.sample_rate, other.sample_rate));
        }
    }

    let n = primary.len();
    let mut left = vec![0.0f64; n];
    let mut right = vec![0.0f64; n];
    let mut accumulate = |clip: &AudioClip, w: f64| {
        for i in 0..n {
            left[i] += w * clip.left[i];
            right[i] += w * clip.right[i];
        }
    };
    accumulate(primary, weights[0]);
    for (other, &w) in others.iter().zip(&weights[1..]) {
        accumulate(other, w);
    }

    let mut mixed = AudioClip { left, right, sample_rate: primary.sample_rate };
    let peak = mixed.peak();
    if peak > 1.0 {
        let scale = 0.95 / peak;
        mixed.left.iter_mut().for_each(|s| *s *= scale);
        mixed.right.iter_mut().for_each(|s| *s *= scale);
    }
    Ok(mixed)
}

/// Per-segment RNG stream: `ChaCha12` keyed by SHA-256(seed, segment_id).
fn segment_rng(seed: u64, segment_id: &str) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(segment_id.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(key)
}

/// The mixing recipe for one augmented clip, drawn from a segment's stream.
#[derive(Debug, Clone, PartialEq)]
struct MixPlan {
    /// Indices into the same-scene segment list (primary excluded).
    partners: Vec<usize>,
    /// weights[0] is the primary weight.
    weights: Vec<f64>,
}

fn draw_plan(rng: &mut ChaCha12Rng, pool: usize, k_min: usize, k_max: usize) -> MixPlan {
    let k = rng.random_range(k_min..=k_max);
    let partners: Vec<usize> = sample_indices(rng, pool, k).into_iter().collect();
    let primary_weight = rng.random_range(0.5..0.9);
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
    let raw_sum: f64 = raw.iter().sum();
    let mut weights = Vec::with_capacity(k + 1);
    weights.push(primary_weight);
    if raw_sum > 1e-12 {
        weights.extend(raw.iter().map(|r| (1.0 - primary_weight) * r / raw_sum));
    } else {
        weights.extend(std::iter::repeat((1.0 - primary_weight) / k as f64).take(k));
    }
    MixPlan { partners, weights }
}

/// Generate mixed WAVs for every segment of a train manifest.
///
/// Returns a manifest with exactly `(1 + clips_per_segment) ×` the input
/// entry count: originals first, then augmented entries tagged
/// `provenance=augmented`, labeled with the source scene, with audio written
/// under `out_dir`.
pub fn augment_dataset(
    train: &DatasetManifest,
    config: &AugmentConfig,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest, AugmentError> {
    let out_dir = out_dir.as_ref();
    if let Some(bad) = train.entries.iter().find(|e| e.split != Split::Train) {
        return Err(AugmentError::NonTrainSplit(bad.segment_id.clone()));
    }

    // group same-scene segments, preserving manifest order
    let mut by_scene: HashMap<usize, Vec<&ManifestEntry>> = HashMap::new();
    for e in &train.entries {
        by_scene.entry(e.scene_label.index()).or_default().push(e);
    }
    for group in by_scene.values() {
        if group.len() < config.k_max + 1 {
            return Err(AugmentError::ClassTooSmall {
                scene: group[0].scene_label.name().to_string(),
                count: group.len(),
                need: config.k_max + 1,
                k_max: config.k_max,
            });
        }
    }
    std::fs::create_dir_all(out_dir)?;

    // Plan all mixes up front (cheap, single-threaded, deterministic), then
    // render in parallel; plans depend only on (seed, segment_id).
    struct Job<'a> {
        primary: &'a ManifestEntry,
        partners: Vec<&'a ManifestEntry>,
        weights: Vec<f64>,
        out_path: PathBuf,
    }
    let mut jobs = Vec::new();
    for entry in &train.entries {
        let peers: Vec<&ManifestEntry> = by_scene[&entry.scene_label.index()]
            .iter()
            .copied()
            .filter(|e| e.segment_id != entry.segment_id)
            .collect();
        let mut rng = segment_rng(config.seed, &entry.segment_id);
        for copy in 1..=config.clips_per_segment {
            let plan = draw_plan(&mut rng, peers.len(), config.k_min, config.k_max);
            let partners: Vec<&ManifestEntry> =
                plan.partners.iter().map(|&i| peers[i]).collect();
            let out_path = out_dir.join(format!("{}_aug{}.wav", entry.segment_id, copy));
            jobs.push(Job { primary: entry, partners, weights: plan.weights, out_path });
        }
    }

    jobs.par_iter().try_for_each(|job| -> Result<(), AugmentError> {
        let primary = read_wav(&job.primary.audio_path)?;
        let partner_clips: Vec<AudioClip> = job
            .partners
            .iter()
            .map(|p| read_wav(&p.audio_path))
            .collect::<Result<_, _>>()?;
        let refs: Vec<&AudioClip> = partner_clips.iter().collect();
        let mixed = mix_clips(&primary, &refs, &job.weights)?;
        write_wav(&job.out_path, &mixed, SampleFormat::Float32)?;
        Ok(())
    })?;

    let mut entries = train.entries.clone();
    for job in &jobs {
        entries.push(ManifestEntry {
            segment_id: job.out_path.file_stem().unwrap().to_string_lossy().into_owned(),
            audio_path: job.out_path.clone(),
            scene_label: job.primary.scene_label,
            split: Split::Train,
            provenance: Provenance::Augmented,
        });
    }
    Ok(DatasetManifest { entries })
}
