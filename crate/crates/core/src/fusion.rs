//! Score fusion and accuracy reporting.
//!
//! Two fusion strategies: elementwise posterior averaging, and a multiclass
//! logistic regression over log-posteriors with one scalar weight per system
//! plus a per-class offset — a deliberately small parameter count, since the
//! fusion training set (the validation split) is easy to over-fit.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::scenes::{argmax, SceneLabel, ScoreVector, ALL_SCENES, NUM_SCENES};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("segment sets differ between systems {0} and {1}")]
    SegmentSetMismatch(String, String),
    #[error("score space mismatch: expected {expected:?}, got {got:?} in {system}")]
    SpaceMismatch { expected: ScoreSpace, got: ScoreSpace, system: String },
    #[error("system count {got} does not match the fusion model ({expected})")]
    SystemCountMismatch { expected: usize, got: usize },
    #[error("row for segment {segment}: {problem}")]
    BadRow { segment: String, problem: String },
    #[error("duplicate segment {0}")]
    DuplicateSegment(String),
    #[error("no reference label for segment {0}")]
    MissingLabel(String),
    #[error("need at least one segment per class, class {0} is empty")]
    DegenerateLabels(usize),
    #[error("no tables given")]
    Empty,
    #[error("fusion training loss increased at iteration {0} even at the fallback rate")]
    NonMonotonic(usize),
    #[error("bad score file {path}: {problem}")]
    BadFile { path: String, problem: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreSpace {
    Posterior,
    LogPosterior,
}

/// Per-system table of 10-way scores, one row per segment.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    pub system_id: String,
    pub segment_ids: Vec<String>,
    pub scores: Vec<ScoreVector>,
    pub space: ScoreSpace,
}

impl ScoreTable {
    pub fn new(
        system_id: impl Into<String>,
        rows: Vec<(String, ScoreVector)>,
        space: ScoreSpace,
    ) -> Result<Self, FusionError> {
        let system_id = system_id.into();
        let mut seen = std::collections::HashSet::new();
        let mut segment_ids = Vec::with_capacity(rows.len());
        let mut scores = Vec::with_capacity(rows.len());
        for (segment, score) in rows {
            if !seen.insert(segment.clone()) {
                return Err(FusionError::DuplicateSegment(segment));
            }
            if space == ScoreSpace::Posterior {
                validate_posterior(&segment, &score)?;
            }
            segment_ids.push(segment);
            scores.push(score);
        }
        Ok(ScoreTable { system_id, segment_ids, scores, space })
    }

    pub fn len(&self) -> usize {
        self.segment_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segment_ids.is_empty()
    }

    /// Posteriors → log posteriors with a 1e-10 floor.
    pub fn to_log_space(&self) -> ScoreTable {
        match self.space {
            ScoreSpace::LogPosterior => self.clone(),
            ScoreSpace::Posterior => {
                let scores = self
                    .scores
                    .iter()
                    .map(|row| {
                        let mut out = [0.0; NUM_SCENES];
                        for (o, &p) in out.iter_mut().zip(row) {
                            *o = p.max(1e-10).ln();
                        }
                        out
                    })
                    .collect();
                ScoreTable {
                    system_id: self.system_id.clone(),
                    segment_ids: self.segment_ids.clone(),
                    scores,
                    space: ScoreSpace::LogPosterior,
                }
            }
        }
    }
}

fn validate_posterior(segment: &str, score: &ScoreVector) -> Result<(), FusionError> {
    if score.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(FusionError::BadRow {
            segment: segment.to_string(),
            problem: "negative or non-finite posterior".into(),
        });
    }
    let sum: f64 = score.iter().sum();
    if (sum - 1.0).abs() > 1e-5 {
        return Err(FusionError::BadRow {
            segment: segment.to_string(),
            problem: format!("posteriors sum to {sum}"),
        });
    }
    Ok(())
}

/// Tables must cover the same segments; returns the row order of the first
/// table and per-table row indices aligned to it.
fn align_tables(tables: &[ScoreTable]) -> Result<Vec<Vec<usize>>, FusionError> {
    let first = tables.first().ok_or(FusionError::Empty)?;
    let mut alignments = Vec::with_capacity(tables.len());
    for table in tables {
        if table.len() != first.len() {
            return Err(FusionError::SegmentSetMismatch(
                first.system_id.clone(),
                table.system_id.clone(),
            ));
        }
        let index: HashMap<&str, usize> = table
            .segment_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut rows = Vec::with_capacity(first.len());
        for segment in &first.segment_ids {
            match index.get(segment.as_str()) {
                Some(&i) => rows.push(i),
                None => {
                    return Err(FusionError::SegmentSetMismatch(
                        first.system_id.clone(),
                        table.system_id.clone(),
                    ))
                }
            }
        }
        alignments.push(rows);
    }
    Ok(alignments)
}

/// Elementwise arithmetic mean of posterior tables.
pub fn average_fusion(tables: &[ScoreTable]) -> Result<ScoreTable, FusionError> {
    let first = tables.first().ok_or(FusionError::Empty)?;
    for t in tables {
        if t.space != ScoreSpace::Posterior {
            return Err(FusionError::SpaceMismatch {
                expected: ScoreSpace::Posterior,
                got: t.space,
                system: t.system_id.clone(),
            });
        }
    }
    let alignments = align_tables(tables)?;
    let k = tables.len() as f64;
    let mut rows = Vec::with_capacity(first.len());
    for (row, segment) in first.segment_ids.iter().enumerate() {
        let mut acc = [0.0f64; NUM_SCENES];
        for (table, align) in tables.iter().zip(&alignments) {
            let src = &table.scores[align[row]];
            for (a, &s) in acc.iter_mut().zip(src) {
                *a += s;
            }
        }
        for a in acc.iter_mut() {
            *a /= k;
        }
        rows.push((segment.clone(), acc));
    }
    ScoreTable::new("average-fusion", rows, ScoreSpace::Posterior)
}

/// Trained fusion: `s_c = Σ_k w_k · log p_k,c + o_c`, softmaxed.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub weights: Vec<f64>,
    pub offsets: [f64; NUM_SCENES],
}

#[derive(Debug, Clone)]
pub struct LrFusionConfig {
    pub lr: f64,
    pub iterations: usize,
    pub grad_tolerance: f64,
}

impl Default for LrFusionConfig {
    fn default() -> Self {
        LrFusionConfig { lr: 0.01, iterations: 500, grad_tolerance: 1e-6 }
    }
}

struct FusionProblem {
    /// `[segment][system]` log-score rows.
    log_scores: Vec<Vec<ScoreVector>>,
    labels: Vec<usize>,
}

impl FusionProblem {
    fn fused_row(&self, seg: usize, model: &FusionModel) -> ScoreVector {
        let mut s = model.offsets;
        for (k, w) in model.weights.iter().enumerate() {
            for c in 0..NUM_SCENES {
                s[c] += w * self.log_scores[seg][k][c];
            }
        }
        s
    }

    /// Mean cross-entropy and its gradient (weights, offsets).
    fn loss_and_grad(&self, model: &FusionModel) -> (f64, Vec<f64>, [f64; NUM_SCENES]) {
        let n = self.labels.len() as f64;
        let mut loss = 0.0;
        let mut grad_w = vec![0.0; model.weights.len()];
        let mut grad_o = [0.0f64; NUM_SCENES];
        for (seg, &label) in self.labels.iter().enumerate() {
            let mut s = self.fused_row(seg, model);
            let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in s.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in s.iter_mut() {
                *v /= sum;
            }
            loss += -(s[label].max(1e-300)).ln() / n;
            for c in 0..NUM_SCENES {
                let residual = (s[c] - if c == label { 1.0 } else { 0.0 }) / n;
                grad_o[c] += residual;
                for (k, gw) in grad_w.iter_mut().enumerate() {
                    *gw += residual * self.log_scores[seg][k][c];
                }
            }
        }
        (loss, grad_w, grad_o)
    }
}

fn adam_fit(
    problem: &FusionProblem,
    systems: usize,
    lr: f64,
    config: &LrFusionConfig,
) -> Result<(FusionModel, Vec<f64>), FusionError> {
    let mut model = FusionModel { weights: vec![0.0; systems], offsets: [0.0; NUM_SCENES] };
    let dim = systems + NUM_SCENES;
    let (mut m, mut v) = (vec![0.0f64; dim], vec![0.0f64; dim]);
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut losses = Vec::with_capacity(config.iterations);
    for it in 1..=config.iterations {
        let (loss, grad_w, grad_o) = problem.loss_and_grad(&model);
        losses.push(loss);
        let flat: Vec<f64> = grad_w.iter().chain(grad_o.iter()).cloned().collect();
        if flat.iter().map(|g| g.abs()).fold(0.0, f64::max) < config.grad_tolerance {
            break;
        }
        let t = it as f64;
        for (i, &g) in flat.iter().enumerate() {
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / (1.0 - b1.powf(t));
            let v_hat = v[i] / (1.0 - b2.powf(t));
            let update = lr * m_hat / (v_hat.sqrt() + eps);
            if i < systems {
                model.weights[i] -= update;
            } else {
                model.offsets[i - systems] -= update;
            }
        }
    }
    Ok((model, losses))
}

/// Fit the logistic-regression fusion on labeled validation scores.
///
/// Full-batch Adam from zero initialization; if the loss trace is not
/// monotone non-increasing, training restarts once at a tenth of the rate.
pub fn fit_lr_fusion(
    tables: &[ScoreTable],
    labels: &HashMap<String, SceneLabel>,
    config: &LrFusionConfig,
) -> Result<FusionModel, FusionError> {
    let first = tables.first().ok_or(FusionError::Empty)?;
    let logs: Vec<ScoreTable> = tables.iter().map(|t| t.to_log_space()).collect();
    let alignments = align_tables(&logs)?;

    let mut label_ids = Vec::with_capacity(first.len());
    let mut class_seen = [false; NUM_SCENES];
    for segment in &first.segment_ids {
        let label = labels
            .get(segment)
            .ok_or_else(|| FusionError::MissingLabel(segment.clone()))?;
        label_ids.push(label.index());
        class_seen[label.index()] = true;
    }
    if label_ids.iter().all(|&l| l == label_ids[0]) {
        return Err(FusionError::DegenerateLabels(label_ids[0]));
    }

    let log_scores: Vec<Vec<ScoreVector>> = (0..first.len())
        .map(|row| {
            logs.iter()
                .zip(&alignments)
                .map(|(t, a)| t.scores[a[row]])
                .collect()
        })
        .collect();
    let problem = FusionProblem { log_scores, labels: label_ids };

    let (model, losses) = adam_fit(&problem, tables.len(), config.lr, config)?;
    if is_monotone_non_increasing(&losses) {
        return Ok(model);
    }
    // fallback at a smaller rate
    let (model, losses) = adam_fit(&problem, tables.len(), config.lr * 0.1, config)?;
    if let Some(bad) = first_increase(&losses) {
        return Err(FusionError::NonMonotonic(bad));
    }
    Ok(model)
}

fn first_increase(losses: &[f64]) -> Option<usize> {
    losses.windows(2).position(|w| w[1] > w[0] + 1e-12).map(|i| i + 1)
}

fn is_monotone_non_increasing(losses: &[f64]) -> bool {
    first_increase(losses).is_none()
}

/// Apply a trained fusion model; output is a posterior table.
pub fn apply_lr_fusion(
    model: &FusionModel,
    tables: &[ScoreTable],
) -> Result<ScoreTable, FusionError> {
    let first = tables.first().ok_or(FusionError::Empty)?;
    if tables.len() != model.weights.len() {
        return Err(FusionError::SystemCountMismatch {
            expected: model.weights.len(),
            got: tables.len(),
        });
    }
    let logs: Vec<ScoreTable> = tables.iter().map(|t| t.to_log_space()).collect();
    let alignments = align_tables(&logs)?;
    let mut rows = Vec::with_capacity(first.len());
    for (row, segment) in first.segment_ids.iter().enumerate() {
        let mut s = model.offsets;
        for ((table, align), &w) in logs.iter().zip(&alignments).zip(&model.weights) {
            let src = &table.scores[align[row]];
            for c in 0..NUM_SCENES {
                s[c] += w * src[c];
            }
        }
        let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in s.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in s.iter_mut() {
            *v /= sum;
        }
        rows.push((segment.clone(), s));
    }
    ScoreTable::new("logreg-fusion", rows, ScoreSpace::Posterior)
}

/// Accuracy report: overall, per scene, and the 10×10 confusion matrix.
#[derive(Debug, Clone)]
pub struct EvaluationReport {
    pub overall_accuracy: f64,
    pub per_scene_accuracy: [f64; NUM_SCENES],
    pub per_scene_counts: [usize; NUM_SCENES],
    /// `confusion[reference][predicted]`.
    pub confusion: [[usize; NUM_SCENES]; NUM_SCENES],
}

/// Score argmax against reference labels; ties break to the lowest index.
pub fn evaluate(
    predictions: &ScoreTable,
    labels: &HashMap<String, SceneLabel>,
) -> Result<EvaluationReport, FusionError> {
    let mut confusion = [[0usize; NUM_SCENES]; NUM_SCENES];
    for (segment, score) in predictions.segment_ids.iter().zip(&predictions.scores) {
        let reference = labels
            .get(segment)
            .ok_or_else(|| FusionError::MissingLabel(segment.clone()))?;
        confusion[reference.index()][argmax(score)] += 1;
    }
    let mut per_scene_accuracy = [0.0f64; NUM_SCENES];
    let mut per_scene_counts = [0usize; NUM_SCENES];
    let mut correct = 0usize;
    let mut total = 0usize;
    for c in 0..NUM_SCENES {
        let count: usize = confusion[c].iter().sum();
        per_scene_counts[c] = count;
        per_scene_accuracy[c] =
            if count > 0 { confusion[c][c] as f64 / count as f64 } else { 0.0 };
        correct += confusion[c][c];
        total += count;
    }
    Ok(EvaluationReport {
        overall_accuracy: if total > 0 { correct as f64 / total as f64 } else { 0.0 },
        per_scene_accuracy,
        per_scene_counts,
        confusion,
    })
}

impl EvaluationReport {
    /// Aligned text table in the published layout (scene label, accuracy %),
    /// with the confusion matrix appended.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<20}{:>14}\n", "Scene label", "Accuracy [%]"));
        out.push_str(&format!("{}\n", "-".repeat(34)));
        for scene in ALL_SCENES {
            out.push_str(&format!(
                "{:<20}{:>14.1}\n",
                scene.display_name(),
                100.0 * self.per_scene_accuracy[scene.index()]
            ));
        }
        out.push_str(&format!("{}\n", "-".repeat(34)));
        out.push_str(&format!("{:<20}{:>14.1}\n", "Average", 100.0 * self.overall_accuracy));
        out.push_str("\nConfusion matrix (rows: reference, columns: predicted)\n");
        out.push_str(&format!("{:<20}", ""));
        for scene in ALL_SCENES {
            out.push_str(&format!("{:>6}", &scene.name()[..scene.name().len().min(5)]));
        }
        out.push('\n');
        for (r, row) in self.confusion.iter().enumerate() {
            out.push_str(&format!("{:<20}", ALL_SCENES[r].display_name()));
            for &v in row {
                out.push_str(&format!("{v:>6}"));
            }
            out.push('\n');
        }
        out
    }

    /// CSV rows: scene label, accuracy percent; final row is the average.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene_label,accuracy_percent\n");
        for scene in ALL_SCENES {
            out.push_str(&format!(
                "{},{:.4}\n",
                scene.name(),
                100.0 * self.per_scene_accuracy[scene.index()]
            ));
        }
        out.push_str(&format!("average,{:.4}\n", 100.0 * self.overall_accuracy));
        out
    }
}

/// Score CSV header, fixed column order.
pub const SCORE_CSV_HEADER: &str = "segment_id,airport,bus,metro,metro_station,park,public_square,shopping_mall,street_pedestrian,street_traffic,tram";

/// Write a table as CSV with 9 significant digits.
pub fn save_score_csv(path: impl AsRef<Path>, table: &ScoreTable) -> Result<(), FusionError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{SCORE_CSV_HEADER}")?;
    for (segment, score) in table.segment_ids.iter().zip(&table.scores) {
        write!(out, "{segment}")?;
        for v in score {
            write!(out, ",{v:.8e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Read a score CSV written by [`save_score_csv`].
pub fn load_score_csv(
    path: impl AsRef<Path>,
    space: ScoreSpace,
) -> Result<ScoreTable, FusionError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| FusionError::BadFile {
        path: path.display().to_string(),
        problem: "empty file".into(),
    })?;
    if header.trim() != SCORE_CSV_HEADER {
        return Err(FusionError::BadFile {
            path: path.display().to_string(),
            problem: "unexpected header".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != NUM_SCENES + 1 {
            return Err(FusionError::BadFile {
                path: path.display().to_string(),
                problem: format!("row {}: {} fields", i + 2, fields.len()),
            });
        }
        let mut score = [0.0f64; NUM_SCENES];
        for (s, f) in score.iter_mut().zip(&fields[1..]) {
            *s = f.trim().parse().map_err(|e| FusionError::BadFile {
                path: path.display().to_string(),
                problem: format!("row {}: {e}", i + 2),
            })?;
        }
        rows.push((fields[0].to_string(), score));
    }
    let system_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    ScoreTable::new(system_id, rows, space)
}
