//! scene-forge: acoustic scene classification pipeline CLI.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use scene_forge::fusion::LrFusionConfig;
use scene_forge::manifest::Split;
use scene_forge::models::Topology;

use config::FileConfig;

#[derive(Parser)]
#[command(
    name = "scene-forge",
    about = "Acoustic scene classification: features, CNN training, x-vector backend, fusion",
    version
)]
struct Cli {
    /// Worker threads for per-segment stages (env fallback: SCENE_FORGE_JOBS).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Structured-text config file (key = value sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct FilterArgs {
    /// Restrict to segments named by this manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// With --manifest: keep only one split (train, valid, eval).
    #[arg(long)]
    split: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract and serialize feature tensors for a manifest.
    Features {
        #[arg(long)]
        manifest: PathBuf,
        /// mel or cqt.
        #[arg(long)]
        kind: Option<String>,
        /// m or lrms.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate same-scene mixtures for the train split (3x entries).
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        /// Mixing RNG seed.
        #[arg(long, alias = "augment-seed")]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a topology on a feature directory.
    Train {
        /// cnn2d or xvec1d.
        #[arg(long)]
        topology: String,
        #[arg(long)]
        features: PathBuf,
        /// Labels + split source; may also come from [data] manifest in the config.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        valid_fraction: Option<f64>,
    },
    /// Write softmax posteriors for feature maps.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[command(flatten)]
        filter: FilterArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract 128-dim embeddings from an xvec1d checkpoint.
    Xvectors {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[command(flatten)]
        filter: FilterArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the regularized LDA backend on labeled embeddings.
    Rlda {
        #[arg(long)]
        xvectors: PathBuf,
        /// Manifest supplying segment labels.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        out_dim: Option<usize>,
    },
    /// Cosine-score embeddings against the RLDA class representations.
    ScoreCosine {
        #[arg(long)]
        rlda: PathBuf,
        #[arg(long)]
        xvectors: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Softmax temperature for posterior calibration.
        #[arg(long)]
        temperature: Option<f64>,
        /// Emit raw cosine similarities instead of calibrated posteriors.
        #[arg(long)]
        raw: bool,
    },
    /// Combine score files by averaging or trained logistic regression.
    Fuse {
        /// average or logreg.
        #[arg(long)]
        method: String,
        /// Score CSVs, one per system.
        #[arg(long, num_args = 1.., required = true)]
        scores: Vec<PathBuf>,
        /// Labels manifest for logreg fitting.
        #[arg(long)]
        fit_labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy report against reference labels.
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference verification of every layer's backward pass.
    Gradcheck {
        /// Number of random seeds per layer.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Generate the labeled synthetic scene corpus.
    MakeSyntheticCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        clips_per_class: Option<usize>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        sample_rate: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        eval_fraction: Option<f64>,
    },
}

fn parse_split(s: &str) -> anyhow::Result<Split> {
    Split::parse(s).ok_or_else(|| anyhow::anyhow!("unknown split {s:?}"))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let jobs = cli
        .jobs
        .or_else(|| std::env::var("SCENE_FORGE_JOBS").ok().and_then(|v| v.parse().ok()));
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().ok();
    }
    let file = FileConfig::load(cli.config.as_deref())?;

    match cli.command {
        Command::Features { manifest, kind, mode, out } => {
            let kind = commands::parse_kind(
                kind.as_deref().or(file.features.kind.as_deref()).unwrap_or("mel"),
            )?;
            let mode = commands::parse_mode(
                mode.as_deref().or(file.features.mode.as_deref()).unwrap_or("m"),
            )?;
            commands::cmd_features(&manifest, kind, mode, &out, &file.feature_config())
        }
        Command::Augment { manifest, seed, out } => {
            commands::cmd_augment(&manifest, &file.augment_config(seed), &out)
        }
        Command::Train {
            topology,
            features,
            manifest,
            out,
            seed,
            batch_size,
            valid_fraction,
        } => {
            let topology = Topology::parse(&topology)
                .ok_or_else(|| anyhow::anyhow!("unknown topology {topology:?}"))?;
            let manifest_path = manifest
                .or_else(|| file.data.manifest.clone())
                .ok_or_else(|| anyhow::anyhow!("no manifest: pass --manifest or set [data] manifest"))?;
            let train_config = file.train_config(seed, batch_size);
            let args = commands::TrainArgs {
                topology,
                features_dir: &features,
                manifest_path: &manifest_path,
                out: &out,
                valid_fraction: valid_fraction
                    .or(file.data.valid_fraction)
                    .unwrap_or(0.3),
                split_seed: file.data.split_seed.unwrap_or(train_config.seed),
                standardize: file.features.standardize.unwrap_or(true),
                train_config,
            };
            commands::cmd_train(&args)
        }
        Command::Predict { ckpt, features, filter, out } => {
            let split = filter.split.as_deref().map(parse_split).transpose()?;
            commands::cmd_predict(&ckpt, &features, filter.manifest.as_deref(), split, &out)
        }
        Command::Xvectors { ckpt, features, filter, out } => {
            let split = filter.split.as_deref().map(parse_split).transpose()?;
            commands::cmd_xvectors(&ckpt, &features, filter.manifest.as_deref(), split, &out)
        }
        Command::Rlda { xvectors, labels, out, alpha, beta, out_dim } => {
            let config = file.rlda_config(alpha, beta, out_dim);
            commands::cmd_rlda(&xvectors, &labels, &out, &config)
        }
        Command::ScoreCosine { rlda, xvectors, out, temperature, raw } => {
            let temperature =
                temperature.or(file.fusion.temperature).unwrap_or(0.1);
            commands::cmd_score_cosine(&rlda, &xvectors, &out, temperature, raw)
        }
        Command::Fuse { method, scores, fit_labels, out } => {
            let defaults = LrFusionConfig::default();
            let fusion = LrFusionConfig {
                lr: file.fusion.logreg_lr.unwrap_or(defaults.lr),
                iterations: file.fusion.logreg_iterations.unwrap_or(defaults.iterations),
                grad_tolerance: defaults.grad_tolerance,
            };
            commands::cmd_fuse(&method, &scores, fit_labels.as_deref(), &out, &fusion)
        }
        Command::Evaluate { scores, labels, out } => {
            commands::cmd_evaluate(&scores, &labels, &out)
        }
        Command::Gradcheck { seeds } => commands::cmd_gradcheck(seeds),
        Command::MakeSyntheticCorpus {
            out,
            clips_per_class,
            duration,
            sample_rate,
            seed,
            eval_fraction,
        } => {
            let mut config = file.synth_config(seed);
            if let Some(v) = clips_per_class {
                config.clips_per_class = v;
            }
            if let Some(v) = duration {
                config.duration_s = v;
            }
            if let Some(v) = sample_rate {
                config.sample_rate = v;
            }
            if let Some(v) = eval_fraction {
                config.eval_fraction = v;
            }
            commands::cmd_make_corpus(&out, &config)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
