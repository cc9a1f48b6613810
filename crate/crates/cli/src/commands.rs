//! Subcommand implementations.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;

use scene_forge::audio::ChannelMode;
use scene_forge::augment::augment_dataset;
use scene_forge::features::{
    extract_features_with, read_feature_map, write_feature_map, FeatureConfig, FeatureKind,
    FeatureMap, Standardizer,
};
use scene_forge::fusion::{
    apply_lr_fusion, average_fusion, evaluate, fit_lr_fusion, load_score_csv, save_score_csv,
    LrFusionConfig, ScoreSpace, ScoreTable,
};
use scene_forge::manifest::{load_manifest, split_dataset, DatasetManifest, Split};
use scene_forge::models::{
    build_model, load_checkpoint, save_checkpoint, train, Checkpoint, LabeledSet, Topology,
    TrainConfig,
};
use scene_forge::nn::standard_layer_checks;
use scene_forge::rlda::{
    calibrate_cosine, fit_rlda, load_rlda, load_xvectors, save_rlda, save_xvectors,
    LabeledXVectorSet, RldaConfig,
};
use scene_forge::scenes::SceneLabel;
use scene_forge::synth::{generate_corpus, SynthConfig};
use scene_forge::wav::read_wav;

pub fn parse_kind(s: &str) -> anyhow::Result<FeatureKind> {
    match s {
        "mel" => Ok(FeatureKind::Mel),
        "cqt" => Ok(FeatureKind::Cqt),
        _ => bail!("unknown feature kind {s:?} (expected mel or cqt)"),
    }
}

pub fn parse_mode(s: &str) -> anyhow::Result<ChannelMode> {
    match s {
        "m" => Ok(ChannelMode::M),
        "lrms" => Ok(ChannelMode::Lrms),
        _ => bail!("unknown channel mode {s:?} (expected m or lrms)"),
    }
}

/// Extract and serialize features for every manifest entry.
pub fn cmd_features(
    manifest_path: &Path,
    kind: FeatureKind,
    mode: ChannelMode,
    out_dir: &Path,
    config: &FeatureConfig,
) -> anyhow::Result<()> {
    let manifest = load_manifest(manifest_path)?;
    std::fs::create_dir_all(out_dir)?;
    let count = manifest.len();
    manifest
        .entries
        .par_iter()
        .try_for_each(|entry| -> anyhow::Result<()> {
            let clip = read_wav(&entry.audio_path)
                .with_context(|| format!("segment {}", entry.segment_id))?;
            let map = extract_features_with(&clip, kind, mode, config)?
                .with_segment_id(entry.segment_id.clone());
            write_feature_map(out_dir.join(format!("{}.sft", entry.segment_id)), &map)?;
            Ok(())
        })?;
    println!(
        "features: {} segments -> {} ({} {})",
        count,
        out_dir.display(),
        kind.name(),
        match mode {
            ChannelMode::M => "m",
            ChannelMode::Lrms => "lrms",
        }
    );
    Ok(())
}

/// Emit mixed WAVs plus the augmented manifest (3x entries at the defaults).
pub fn cmd_augment(
    manifest_path: &Path,
    config: &scene_forge::augment::AugmentConfig,
    out_dir: &Path,
) -> anyhow::Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let train_side = manifest.filter_split(Split::Train);
    let augmented = augment_dataset(&train_side, config, out_dir.join("audio"))?;
    let augmented_count = augmented.len();
    // carry non-train entries through unchanged
    let mut entries = augmented.entries;
    entries.extend(
        manifest.entries.iter().filter(|e| e.split != Split::Train).cloned(),
    );
    let out_manifest = DatasetManifest { entries };
    let manifest_out = out_dir.join("manifest.tsv");
    out_manifest.save(&manifest_out)?;
    println!(
        "augment: {} train segments -> {} (manifest {})",
        train_side.len(),
        augmented_count,
        manifest_out.display()
    );
    Ok(())
}

fn read_features_for(
    features_dir: &Path,
    manifest: &DatasetManifest,
) -> anyhow::Result<Vec<FeatureMap>> {
    manifest
        .entries
        .par_iter()
        .map(|entry| {
            let path = features_dir.join(format!("{}.sft", entry.segment_id));
            read_feature_map(&path)
                .with_context(|| format!("feature map for segment {}", entry.segment_id))
        })
        .collect()
}

/// All .sft files in a directory, sorted by file name.
fn read_features_dir(features_dir: &Path) -> anyhow::Result<Vec<FeatureMap>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(features_dir)
        .with_context(|| format!("cannot list {}", features_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "sft").unwrap_or(false))
        .collect();
    paths.sort();
    paths
        .par_iter()
        .map(|p| read_feature_map(p).with_context(|| p.display().to_string()))
        .collect()
}

/// Feature maps for prediction-style commands: the whole directory, or the
/// subset named by a manifest (optionally one split of it).
fn select_features(
    features_dir: &Path,
    manifest_path: Option<&Path>,
    split: Option<Split>,
) -> anyhow::Result<Vec<FeatureMap>> {
    match manifest_path {
        None => read_features_dir(features_dir),
        Some(mp) => {
            let mut manifest = load_manifest(mp)?;
            if let Some(s) = split {
                manifest = manifest.filter_split(s);
            }
            read_features_for(features_dir, &manifest)
        }
    }
}

pub struct TrainArgs<'a> {
    pub topology: Topology,
    pub features_dir: &'a Path,
    pub manifest_path: &'a Path,
    pub out: &'a Path,
    pub valid_fraction: f64,
    pub split_seed: u64,
    pub standardize: bool,
    pub train_config: TrainConfig,
}

/// Run the published schedule on the manifest's train split and write the
/// checkpoint plus a history CSV next to it.
pub fn cmd_train(args: &TrainArgs) -> anyhow::Result<()> {
    let manifest = load_manifest(args.manifest_path)?;
    let train_side = manifest.filter_split(Split::Train);
    if train_side.is_empty() {
        bail!("manifest has no train-split entries");
    }
    let (train_manifest, valid_manifest) =
        split_dataset(&train_side, args.valid_fraction, args.split_seed)?;
    let mut train_maps = read_features_for(args.features_dir, &train_manifest)?;
    let mut valid_maps = read_features_for(args.features_dir, &valid_manifest)?;

    let standardizer = if args.standardize {
        let stats = Standardizer::fit(&train_maps)?;
        train_maps = train_maps.iter().map(|m| stats.apply(m)).collect();
        valid_maps = valid_maps.iter().map(|m| stats.apply(m)).collect();
        Some(stats)
    } else {
        None
    };

    let first = &train_maps[0];
    let (bands, frames, channels) = (first.bands, first.frames, first.channels);
    let mut model = build_model::<f32>(
        args.topology,
        channels,
        bands,
        frames,
        args.train_config.seed,
    )?;

    let to_set = |maps: &[FeatureMap], manifest: &DatasetManifest| -> anyhow::Result<LabeledSet<f32>> {
        let mut inputs = Vec::with_capacity(maps.len());
        for map in maps {
            inputs.push(model.input_from_features(map)?);
        }
        let labels = manifest.entries.iter().map(|e| e.scene_label.index()).collect();
        Ok(LabeledSet::new(inputs, labels))
    };
    let train_set = to_set(&train_maps, &train_manifest)?;
    let valid_set = to_set(&valid_maps, &valid_manifest)?;

    println!(
        "train: {} topology, {} train / {} valid segments, batch {}, lr schedule {:?}",
        args.topology.name(),
        train_set.len(),
        valid_set.len(),
        args.train_config.batch_size,
        args.train_config.lr_sequence()
    );
    let history = train(&mut model, &train_set, &valid_set, &args.train_config)?;
    save_checkpoint(args.out, &mut model, standardizer.as_ref())?;
    let history_path = args.out.with_extension("history.csv");
    history.save_csv(&history_path)?;
    println!(
        "train: best epoch {} (valid loss {:.6}), checkpoint {}, history {}",
        history.best_epoch,
        history.best_valid_loss,
        args.out.display(),
        history_path.display()
    );
    Ok(())
}

fn standardized(maps: Vec<FeatureMap>, standardizer: &Option<Standardizer>) -> Vec<FeatureMap> {
    match standardizer {
        None => maps,
        Some(s) => maps.iter().map(|m| s.apply(m)).collect(),
    }
}

pub fn cmd_predict(
    ckpt: &Path,
    features_dir: &Path,
    manifest_path: Option<&Path>,
    split: Option<Split>,
    out: &Path,
) -> anyhow::Result<()> {
    let Checkpoint { mut model, standardizer } = load_checkpoint::<f32>(ckpt)?;
    let maps = standardized(select_features(features_dir, manifest_path, split)?, &standardizer);
    if maps.is_empty() {
        bail!("no feature maps selected");
    }
    let mut rows = Vec::with_capacity(maps.len());
    let items: Vec<_> = maps
        .iter()
        .map(|m| model.input_from_features(m))
        .collect::<Result<_, _>>()?;
    let scores = model.predict_batch(&items)?;
    for (map, score) in maps.iter().zip(scores) {
        rows.push((map.segment_id.clone(), score));
    }
    let table = ScoreTable::new("predict", rows, ScoreSpace::Posterior)?;
    save_score_csv(out, &table)?;
    println!("predict: {} segments -> {}", table.len(), out.display());
    Ok(())
}

pub fn cmd_xvectors(
    ckpt: &Path,
    features_dir: &Path,
    manifest_path: Option<&Path>,
    split: Option<Split>,
    out: &Path,
) -> anyhow::Result<()> {
    let Checkpoint { mut model, standardizer } = load_checkpoint::<f32>(ckpt)?;
    let maps = standardized(select_features(features_dir, manifest_path, split)?, &standardizer);
    if maps.is_empty() {
        bail!("no feature maps selected");
    }
    let items: Vec<_> = maps
        .iter()
        .map(|m| model.input_from_features(m))
        .collect::<Result<_, _>>()?;
    let vectors = model.extract_xvectors(&items)?;
    let records: Vec<(String, Vec<f64>)> = maps
        .iter()
        .zip(vectors)
        .map(|(m, v)| (m.segment_id.clone(), v))
        .collect();
    save_xvectors(out, &records)?;
    println!("xvectors: {} embeddings -> {}", records.len(), out.display());
    Ok(())
}

fn label_map(manifest: &DatasetManifest) -> HashMap<String, SceneLabel> {
    manifest
        .entries
        .iter()
        .map(|e| (e.segment_id.clone(), e.scene_label))
        .collect()
}

pub fn cmd_rlda(
    xvectors_path: &Path,
    labels_path: &Path,
    out: &Path,
    config: &RldaConfig,
) -> anyhow::Result<()> {
    let records = load_xvectors(xvectors_path)?;
    let labels = label_map(&load_manifest(labels_path)?);
    let mut vectors = Vec::with_capacity(records.len());
    let mut label_ids = Vec::with_capacity(records.len());
    for (id, vector) in records {
        let label = labels
            .get(&id)
            .with_context(|| format!("no label for segment {id}"))?;
        vectors.push(vector);
        label_ids.push(label.index());
    }
    let set = LabeledXVectorSet::new(vectors, label_ids)?;
    let rlda = fit_rlda(&set, config)?;
    save_rlda(out, &rlda)?;
    println!(
        "rlda: {} vectors, {} -> {} dims (alpha {}, beta {}), wrote {}",
        set.vectors.len(),
        rlda.in_dim(),
        rlda.out_dim(),
        rlda.alpha,
        rlda.beta,
        out.display()
    );
    Ok(())
}

pub fn cmd_score_cosine(
    rlda_path: &Path,
    xvectors_path: &Path,
    out: &Path,
    temperature: f64,
    raw: bool,
) -> anyhow::Result<()> {
    let rlda = load_rlda(rlda_path)?;
    let records = load_xvectors(xvectors_path)?;
    let mut rows = Vec::with_capacity(records.len());
    let mut degenerate = 0usize;
    for (id, vector) in records {
        let (scores, flat) = rlda.cosine_scores(&vector)?;
        if flat {
            degenerate += 1;
        }
        let row = if raw { scores } else { calibrate_cosine(&scores, temperature) };
        rows.push((id, row));
    }
    if degenerate > 0 {
        eprintln!("warning: {degenerate} zero-norm projections scored 0 everywhere");
    }
    let space = if raw { ScoreSpace::LogPosterior } else { ScoreSpace::Posterior };
    let table = ScoreTable::new("cosine", rows, space)?;
    save_score_csv(out, &table)?;
    println!(
        "score-cosine: {} segments -> {}{}",
        table.len(),
        out.display(),
        if raw { " (raw cosine)" } else { "" }
    );
    Ok(())
}

pub fn cmd_fuse(
    method: &str,
    score_paths: &[PathBuf],
    fit_labels: Option<&Path>,
    out: &Path,
    fusion: &LrFusionConfig,
) -> anyhow::Result<()> {
    if score_paths.is_empty() {
        bail!("need at least one score file");
    }
    let tables: Vec<ScoreTable> = score_paths
        .iter()
        .map(|p| load_score_csv(p, ScoreSpace::Posterior).map_err(anyhow::Error::from))
        .collect::<anyhow::Result<_>>()?;
    let fused = match method {
        "average" => average_fusion(&tables)?,
        "logreg" => {
            let labels_path =
                fit_labels.context("--fit-labels is required for logreg fusion")?;
            let labels = label_map(&load_manifest(labels_path)?);
            let model = fit_lr_fusion(&tables, &labels, fusion)?;
            println!("fuse: logreg weights {:?}", model.weights);
            apply_lr_fusion(&model, &tables)?
        }
        other => bail!("unknown fusion method {other:?} (expected average or logreg)"),
    };
    save_score_csv(out, &fused)?;
    println!("fuse: {} systems -> {}", tables.len(), out.display());
    Ok(())
}

pub fn cmd_evaluate(scores: &Path, labels_path: &Path, out: &Path) -> anyhow::Result<()> {
    let table = load_score_csv(scores, ScoreSpace::Posterior)?;
    let labels = label_map(&load_manifest(labels_path)?);
    let report = evaluate(&table, &labels)?;
    let text = report.to_text();
    std::fs::write(out, &text)?;
    // append rather than swap the extension, so a report named next to a
    // score CSV can never overwrite it
    let mut csv_path = out.as_os_str().to_owned();
    csv_path.push(".csv");
    std::fs::write(std::path::PathBuf::from(csv_path), report.to_csv())?;
    print!("{text}");
    println!(
        "evaluate: overall accuracy {:.2}% -> {}",
        100.0 * report.overall_accuracy,
        out.display()
    );
    Ok(())
}

/// Gradient verification over several seeds; prints the error table.
pub fn cmd_gradcheck(seeds: u64) -> anyhow::Result<()> {
    let mut worst: HashMap<String, f64> = HashMap::new();
    for seed in 0..seeds {
        for report in standard_layer_checks(seed)? {
            let entry = worst.entry(report.layer).or_insert(0.0);
            *entry = entry.max(report.max_rel_err);
        }
    }
    let mut rows: Vec<(String, f64)> = worst.into_iter().collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    println!("{:<60}{:>14}", "layer", "max rel err");
    let mut failed = false;
    for (layer, err) in &rows {
        let status = if *err < 1e-4 { "" } else { "  FAIL" };
        failed |= *err >= 1e-4;
        println!("{layer:<60}{err:>14.3e}{status}");
    }
    if failed {
        bail!("gradient check failed (tolerance 1e-4)");
    }
    println!("gradcheck: all layers within 1e-4 over {seeds} seeds");
    Ok(())
}

pub fn cmd_make_corpus(out_dir: &Path, config: &SynthConfig) -> anyhow::Result<()> {
    let manifest = generate_corpus(config, out_dir)?;
    println!(
        "make-synthetic-corpus: {} clips ({} per class, {:.1} s at {} Hz) -> {}",
        manifest.len(),
        config.clips_per_class,
        config.duration_s,
        config.sample_rate,
        out_dir.display()
    );
    Ok(())
}
