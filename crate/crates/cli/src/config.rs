//! Structured-text configuration.
//!
//! Every pipeline constant lives here as an overridable default, so ablation
//! runs (a beta sweep, a different patience) need no code changes.
//! Precedence: command-line flag > config file > built-in default.

use std::path::{Path, PathBuf};

use anyhow::Context;
use scene_forge::features::FeatureConfig;
use scene_forge::augment::AugmentConfig;
use scene_forge::models::TrainConfig;
use scene_forge::rlda::RldaConfig;
use scene_forge::synth::SynthConfig;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub features: FeaturesSection,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub rlda: RldaSection,
    #[serde(default)]
    pub fusion: FusionSection,
    #[serde(default)]
    pub synth: SynthSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub manifest: Option<PathBuf>,
    pub valid_fraction: Option<f64>,
    pub split_seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesSection {
    pub kind: Option<String>,
    pub mode: Option<String>,
    pub bands: Option<usize>,
    pub fft_size: Option<usize>,
    pub window_ms: Option<f64>,
    pub hop_ms: Option<f64>,
    pub cqt_fmin: Option<f64>,
    pub cqt_bins_per_octave: Option<usize>,
    pub standardize: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub clips_per_segment: Option<usize>,
    pub k_min: Option<usize>,
    pub k_max: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub initial_lr: Option<f64>,
    pub patience: Option<usize>,
    pub lr_phases: Option<usize>,
    pub max_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub improvement_tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RldaSection {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub out_dim: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSection {
    pub temperature: Option<f64>,
    pub logreg_lr: Option<f64>,
    pub logreg_iterations: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub clips_per_class: Option<usize>,
    pub duration_s: Option<f64>,
    pub sample_rate: Option<u32>,
    pub seed: Option<u64>,
    pub eval_fraction: Option<f64>,
    pub comb_gain: Option<f64>,
    pub band_noise_gain: Option<f64>,
    pub background_gain: Option<f64>,
    pub f0_jitter: Option<f64>,
    pub distractor_gain: Option<f64>,
    pub hard_fraction: Option<f64>,
    pub transpose_jitter: Option<f64>,
    pub variant_spread: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<FileConfig> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config {}", p.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("cannot parse config {}", p.display()))
            }
        }
    }

    pub fn feature_config(&self) -> FeatureConfig {
        let d = FeatureConfig::default();
        FeatureConfig {
            bands: self.features.bands.unwrap_or(d.bands),
            fft_size: self.features.fft_size.unwrap_or(d.fft_size),
            window_ms: self.features.window_ms.unwrap_or(d.window_ms),
            hop_ms: self.features.hop_ms.unwrap_or(d.hop_ms),
            cqt_fmin: self.features.cqt_fmin.unwrap_or(d.cqt_fmin),
            cqt_bins_per_octave: self
                .features
                .cqt_bins_per_octave
                .unwrap_or(d.cqt_bins_per_octave),
        }
    }

    /// Flags override config; config overrides the built-in schedule.
    pub fn train_config(&self, seed_flag: Option<u64>, batch_flag: Option<usize>) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            initial_lr: self.train.initial_lr.unwrap_or(d.initial_lr),
            patience: self.train.patience.unwrap_or(d.patience),
            lr_phases: self.train.lr_phases.unwrap_or(d.lr_phases),
            max_epochs: self.train.max_epochs.unwrap_or(d.max_epochs),
            batch_size: batch_flag.or(self.train.batch_size).unwrap_or(d.batch_size),
            seed: seed_flag.or(self.train.seed).unwrap_or(d.seed),
            improvement_tol: self.train.improvement_tol.unwrap_or(d.improvement_tol),
        }
    }

    pub fn augment_config(&self, seed_flag: Option<u64>) -> AugmentConfig {
        let d = AugmentConfig::default();
        AugmentConfig {
            clips_per_segment: self.augment.clips_per_segment.unwrap_or(d.clips_per_segment),
            k_min: self.augment.k_min.unwrap_or(d.k_min),
            k_max: self.augment.k_max.unwrap_or(d.k_max),
            seed: seed_flag.or(self.augment.seed).unwrap_or(d.seed),
        }
    }

    pub fn rlda_config(
        &self,
        alpha_flag: Option<f64>,
        beta_flag: Option<f64>,
        out_dim_flag: Option<usize>,
    ) -> RldaConfig {
        let d = RldaConfig::default();
        RldaConfig {
            alpha: alpha_flag.or(self.rlda.alpha).unwrap_or(d.alpha),
            beta: beta_flag.or(self.rlda.beta).unwrap_or(d.beta),
            out_dim: out_dim_flag.or(self.rlda.out_dim).unwrap_or(d.out_dim),
        }
    }

    pub fn synth_config(&self, seed_flag: Option<u64>) -> SynthConfig {
        let d = SynthConfig::default();
        SynthConfig {
            clips_per_class: self.synth.clips_per_class.unwrap_or(d.clips_per_class),
            duration_s: self.synth.duration_s.unwrap_or(d.duration_s),
            sample_rate: self.synth.sample_rate.unwrap_or(d.sample_rate),
            seed: seed_flag.or(self.synth.seed).unwrap_or(d.seed),
            eval_fraction: self.synth.eval_fraction.unwrap_or(d.eval_fraction),
            comb_gain: self.synth.comb_gain.unwrap_or(d.comb_gain),
            band_noise_gain: self.synth.band_noise_gain.unwrap_or(d.band_noise_gain),
            background_gain: self.synth.background_gain.unwrap_or(d.background_gain),
            f0_jitter: self.synth.f0_jitter.unwrap_or(d.f0_jitter),
            distractor_gain: self.synth.distractor_gain.unwrap_or(d.distractor_gain),
            hard_fraction: self.synth.hard_fraction.unwrap_or(d.hard_fraction),
            transpose_jitter: self.synth.transpose_jitter.unwrap_or(d.transpose_jitter),
            variant_spread: self.synth.variant_spread.unwrap_or(d.variant_spread),
        }
    }
}
