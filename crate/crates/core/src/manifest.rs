//! Dataset manifests: tab-separated segment lists with labels and splits.
//!
//! The on-disk format mirrors DCASE meta files — `audio_path<TAB>scene_label`
//! with optional `split` and `provenance` columns — so real metadata loads
//! unmodified. Segment ids are derived from the path stem; collisions are an
//! error rather than silently suffixed, since renaming would corrupt
//! score-fusion joins downstream.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::scenes::SceneLabel;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("row {row}: unknown scene label {label:?}")]
    UnknownLabel { row: usize, label: String },
    #[error("row {row}: unknown split {split:?}")]
    UnknownSplit { row: usize, split: String },
    #[error("row {row}: expected 2-4 tab-separated fields, found {found}")]
    BadRow { row: usize, found: usize },
    #[error("duplicate segment id {0:?}")]
    DuplicateSegmentId(String),
    #[error("empty manifest")]
    Empty,
    #[error("scene {scene} has {count} segments, need at least {need}")]
    ClassTooSmall { scene: SceneLabel, count: usize, need: usize },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Eval,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Eval => "eval",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "valid" => Some(Split::Valid),
            "eval" => Some(Split::Eval),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Original,
    Augmented,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::Augmented => "augmented",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub segment_id: String,
    pub audio_path: PathBuf,
    pub scene_label: SceneLabel,
    pub split: Split,
    pub provenance: Provenance,
}

/// An ordered, id-unique list of labeled segments.
#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

/// Segment id = file stem of the audio path.
pub fn segment_id_from_path(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

impl DatasetManifest {
    pub fn from_entries(entries: Vec<ManifestEntry>) -> Result<Self, ManifestError> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.segment_id.clone()) {
                return Err(ManifestError::DuplicateSegmentId(e.segment_id.clone()));
            }
        }
        Ok(DatasetManifest { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries belonging to one split, as a new manifest.
    pub fn filter_split(&self, split: Split) -> DatasetManifest {
        DatasetManifest {
            entries: self.entries.iter().filter(|e| e.split == split).cloned().collect(),
        }
    }

    /// Number of entries per scene class, indexed canonically.
    pub fn class_counts(&self) -> [usize; crate::scenes::NUM_SCENES] {
        let mut counts = [0usize; crate::scenes::NUM_SCENES];
        for e in &self.entries {
            counts[e.scene_label.index()] += 1;
        }
        counts
    }

    /// Write as tab-separated rows: path, label, split, provenance.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ManifestError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for e in &self.entries {
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                e.audio_path.display(),
                e.scene_label.name(),
                e.split.name(),
                e.provenance.name()
            )?;
        }
        Ok(())
    }
}

/// Load a tab-separated manifest.
///
/// Row format: `audio_path TAB scene_label [TAB split [TAB provenance]]`.
/// Missing split defaults to `train` (DCASE meta files carry no split
/// column). A leading `filename<TAB>scene_label` header row is skipped.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, ManifestError> {
    let text = std::fs::read_to_string(&path)?;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if row == 1 && fields.first() == Some(&"filename") {
            continue;
        }
        if fields.len() < 2 || fields.len() > 4 {
            return Err(ManifestError::BadRow { row, found: fields.len() });
        }
        let audio_path = PathBuf::from(fields[0]);
        let scene_label = SceneLabel::parse(fields[1]).ok_or_else(|| {
            ManifestError::UnknownLabel { row, label: fields[1].to_string() }
        })?;
        let split = match fields.get(2) {
            Some(&s) if !s.is_empty() => {
                Split::parse(s).ok_or_else(|| ManifestError::UnknownSplit {
                    row,
                    split: s.to_string(),
                })?
            }
            _ => Split::Train,
        };
        let provenance = match fields.get(3) {
            Some(&"augmented") => Provenance::Augmented,
            _ => Provenance::Original,
        };
        let segment_id = segment_id_from_path(&audio_path);
        if !seen.insert(segment_id.clone()) {
            return Err(ManifestError::DuplicateSegmentId(segment_id));
        }
        entries.push(ManifestEntry { segment_id, audio_path, scene_label, split, provenance });
    }
    Ok(DatasetManifest { entries })
}

/// Stratified train/valid partition.
///
/// Each class is shuffled with its own deterministic stream and split so the
/// valid share is `round(n * valid_fraction)` clamped to leave both sides
/// nonempty; the deviation from `valid_fraction` is below one segment per
/// class. Output entries are re-tagged `Train` / `Valid`.
pub fn split_dataset(
    manifest: &DatasetManifest,
    valid_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest), ManifestError> {
    assert!(
        valid_fraction > 0.0 && valid_fraction < 1.0,
        "valid_fraction must lie in (0, 1)"
    );
    if manifest.is_empty() {
        return Err(ManifestError::Empty);
    }

    let mut by_class: Vec<Vec<&ManifestEntry>> = vec![Vec::new(); crate::scenes::NUM_SCENES];
    for e in &manifest.entries {
        by_class[e.scene_label.index()].push(e);
    }

    let mut train = Vec::new();
    let mut valid = Vec::new();
    for (class, group) in by_class.into_iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        if group.len() < 2 {
            return Err(ManifestError::ClassTooSmall {
                scene: SceneLabel::from_index(class).unwrap(),
                count: group.len(),
                need: 2,
            });
        }
        let mut rng = ChaCha12Rng::seed_from_u64(
            seed ^ (class as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let mut group = group;
        group.shuffle(&mut rng);
        let n = group.len();
        let n_valid = ((n as f64 * valid_fraction).round() as usize).clamp(1, n - 1);
        for (i, e) in group.into_iter().enumerate() {
            let mut e = e.clone();
            if i < n_valid {
                e.split = Split::Valid;
                valid.push(e);
            } else {
                e.split = Split::Train;
                train.push(e);
            }
        }
    }
    // keep original manifest order within each side
    let order: std::collections::HashMap<&str, usize> = manifest
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.segment_id.as_str(), i))
        .collect();
    train.sort_by_key(|e| order[e.segment_id.as_str()]);
    valid.sort_by_key(|e| order[e.segment_id.as_str()]);
    Ok((DatasetManifest { entries: train }, DatasetManifest { entries: valid }))
}
