//! Training: Adam over shuffled mini-batches with patience-based early
//! stopping and learning-rate halving.
//!
//! The schedule: train at the initial rate until the validation loss has not
//! improved for more than `patience` epochs, restore the best parameters,
//! halve the rate and continue; after the final phase (or the global epoch
//! cap) the best parameters ever seen are restored. Improvement means the
//! loss drops by more than a small tolerance, so float jitter cannot reset
//! the patience window.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::nn::{softmax_cross_entropy, Adam, Mode, NnError, Real, StepOutcome, Tensor};

use super::Model;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub initial_lr: f64,
    /// Epochs without improvement tolerated before a phase ends.
    pub patience: usize,
    /// Number of learning-rate phases (halving between them).
    pub lr_phases: usize,
    /// Global epoch cap across all phases.
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Validation loss must drop by more than this to count as improvement.
    pub improvement_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 0.001,
            patience: 20,
            lr_phases: 3,
            max_epochs: 200,
            batch_size: 64,
            seed: 0,
            improvement_tol: 1e-5,
        }
    }
}

impl TrainConfig {
    /// The learning rates the schedule can visit: `[0.001, 0.0005, 0.00025]`
    /// at the defaults.
    pub fn lr_sequence(&self) -> Vec<f64> {
        (0..self.lr_phases).map(|i| self.initial_lr / 2f64.powi(i as i32)).collect()
    }
}

/// What the schedule decides after observing one epoch's validation loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleAction {
    /// New best validation loss; caller should snapshot parameters.
    Improved,
    Continue,
    /// Patience ran out: restore the best parameters, use the new rate.
    PhaseEnd { new_lr: f64 },
    /// Patience ran out in the final phase.
    Stop,
}

/// Early-stopping state machine, decoupled from the trainer so schedules can
/// be verified by injecting synthetic loss sequences.
#[derive(Debug, Clone)]
pub struct EarlyStopSchedule {
    patience: usize,
    tol: f64,
    phases: usize,
    pub lr: f64,
    pub phase: usize,
    pub best_loss: f64,
    epochs_since_improvement: usize,
}

impl EarlyStopSchedule {
    pub fn new(config: &TrainConfig) -> Self {
        EarlyStopSchedule {
            patience: config.patience,
            tol: config.improvement_tol,
            phases: config.lr_phases,
            lr: config.initial_lr,
            phase: 1,
            best_loss: f64::INFINITY,
            epochs_since_improvement: 0,
        }
    }

    pub fn observe(&mut self, valid_loss: f64) -> ScheduleAction {
        if self.best_loss - valid_loss > self.tol {
            self.best_loss = valid_loss;
            self.epochs_since_improvement = 0;
            return ScheduleAction::Improved;
        }
        self.epochs_since_improvement += 1;
        if self.epochs_since_improvement > self.patience {
            if self.phase >= self.phases {
                return ScheduleAction::Stop;
            }
            self.phase += 1;
            self.lr /= 2.0;
            self.epochs_since_improvement = 0;
            return ScheduleAction::PhaseEnd { new_lr: self.lr };
        }
        ScheduleAction::Continue
    }
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_acc: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub skipped_steps: usize,
}

impl TrainHistory {
    /// CSV export: epoch, phase, lr, train_loss, valid_loss, valid_acc.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), std::io::Error> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "epoch,phase,lr,train_loss,valid_loss,valid_acc")?;
        for r in &self.epochs {
            writeln!(
                out,
                "{},{},{},{:.9},{:.9},{:.6}",
                r.epoch, r.phase, r.lr, r.train_loss, r.valid_loss, r.valid_acc
            )?;
        }
        Ok(())
    }
}

/// Inputs paired with class labels, already shaped for the model.
pub struct LabeledSet<T: Real> {
    pub inputs: Vec<Tensor<T>>,
    pub labels: Vec<usize>,
}

impl<T: Real> LabeledSet<T> {
    pub fn new(inputs: Vec<Tensor<T>>, labels: Vec<usize>) -> Self {
        assert_eq!(inputs.len(), labels.len(), "one label per input");
        LabeledSet { inputs, labels }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Mean loss and accuracy over a set, inference mode (running batch-norm
/// stats, dropout off).
pub fn evaluate_loss<T: Real>(
    model: &mut Model<T>,
    set: &LabeledSet<T>,
    batch_size: usize,
) -> Result<(f64, f64), NnError> {
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    let n = set.len();
    let mut at = 0;
    while at < n {
        let end = (at + batch_size).min(n);
        let batch = Tensor::stack(&set.inputs[at..end]);
        let logits = model.forward_logits(batch, Mode::Eval)?;
        for bi in 0..end - at {
            let row = logits.item(bi);
            let probs = crate::nn::softmax(row);
            let label = set.labels[at + bi];
            total_loss += crate::nn::cross_entropy(&probs, label)?.to_f64();
            let mut arg = 0;
            for (i, v) in row.iter().enumerate().skip(1) {
                if *v > row[arg] {
                    arg = i;
                }
            }
            if arg == label {
                correct += 1;
            }
        }
        at = end;
    }
    Ok((total_loss / n as f64, correct as f64 / n as f64))
}

/// Run the full schedule; the model ends up holding the parameters with the
/// best validation loss ever seen.
pub fn train<T: Real>(
    model: &mut Model<T>,
    train_set: &LabeledSet<T>,
    valid_set: &LabeledSet<T>,
    config: &TrainConfig,
) -> Result<TrainHistory, NnError> {
    assert!(!train_set.is_empty() && !valid_set.is_empty(), "need data on both sides");
    let mut schedule = EarlyStopSchedule::new(config);
    let mut adam = {
        let params = model.params();
        Adam::new(&params.iter().map(|p| &**p).collect::<Vec<_>>())
    };
    model.reseed_dropout(config.seed);
    let mut shuffle_rng = ChaCha12Rng::seed_from_u64(config.seed ^ 0x5875_661e);
    let mut history = TrainHistory::default();
    let mut best = model.snapshot();
    let mut best_epoch = 0usize;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            // batch norm cannot take a singleton batch in training mode
            if chunk.len() < 2 {
                continue;
            }
            let items: Vec<Tensor<T>> =
                chunk.iter().map(|&i| train_set.inputs[i].clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let batch = Tensor::stack(&items);
            let logits = model.forward_logits(batch, Mode::Train)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch });
            }
            model.backward(grad)?;
            let mut params = model.params();
            match adam.step(&mut params, schedule.lr) {
                StepOutcome::Applied => {}
                StepOutcome::SkippedNonFinite { .. } => history.skipped_steps += 1,
            }
            epoch_loss += loss;
            batches += 1;
        }
        let train_loss = epoch_loss / batches.max(1) as f64;
        let (valid_loss, valid_acc) = evaluate_loss(model, valid_set, config.batch_size)?;
        if !valid_loss.is_finite() {
            return Err(NnError::NonFiniteLoss { epoch });
        }

        let action = schedule.observe(valid_loss);
        history.epochs.push(EpochRecord {
            epoch,
            phase: schedule.phase,
            lr: schedule.lr,
            train_loss,
            valid_loss,
            valid_acc,
            improved: action == ScheduleAction::Improved,
        });
        match action {
            ScheduleAction::Improved => {
                best = model.snapshot();
                best_epoch = epoch;
            }
            ScheduleAction::Continue => {}
            ScheduleAction::PhaseEnd { .. } => {
                model.restore(&best);
                adam.reset();
            }
            ScheduleAction::Stop => break,
        }
    }

    model.restore(&best);
    history.best_epoch = best_epoch;
    history.best_valid_loss = schedule.best_loss;
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, Topology};
    use rand::Rng;

    #[test]
    fn schedule_halves_exactly_at_best_plus_21() {
        let config = TrainConfig::default();
        let mut schedule = EarlyStopSchedule::new(&config);
        // epoch 1 improves, then a flat plateau
        assert_eq!(schedule.observe(1.0), ScheduleAction::Improved);
        let mut transitions = Vec::new();
        for epoch in 2..=200 {
            match schedule.observe(1.0) {
                ScheduleAction::PhaseEnd { new_lr } => transitions.push((epoch, new_lr)),
                ScheduleAction::Stop => {
                    transitions.push((epoch, f64::NAN));
                    break;
                }
                _ => {}
            }
        }
        assert_eq!(transitions.len(), 3);
        assert_eq!(transitions[0].0, 22, "first halving at best(1) + 21");
        assert!((transitions[0].1 - 0.0005).abs() < 1e-15);
        assert_eq!(transitions[1].0, 43);
        assert!((transitions[1].1 - 0.00025).abs() < 1e-15);
        assert_eq!(transitions[2].0, 64, "stop after the third phase's patience");
    }

    #[test]
    fn schedule_tolerance_ignores_float_jitter() {
        let config = TrainConfig::default();
        let mut schedule = EarlyStopSchedule::new(&config);
        schedule.observe(1.0);
        // jitter below 1e-5 is not improvement
        assert_eq!(schedule.observe(1.0 - 5e-6), ScheduleAction::Continue);
        // a real drop is
        assert_eq!(schedule.observe(0.9), ScheduleAction::Improved);
    }

    #[test]
    fn lr_sequence_is_the_published_triple() {
        assert_eq!(TrainConfig::default().lr_sequence(), vec![0.001, 0.0005, 0.00025]);
    }

    /// Tiny separable problem: class = argmax over 3 mean offsets.
    fn separable_set(n_per_class: usize, seed: u64) -> (LabeledSet<f32>, LabeledSet<f32>) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut make = |n: usize| {
            let mut inputs = Vec::new();
            let mut labels = Vec::new();
            for class in 0..3 {
                for _ in 0..n {
                    let mut t = Tensor::zeros(&[80, 100]);
                    for (i, v) in t.data.iter_mut().enumerate() {
                        let band = i / 100;
                        let offset = if band / 26 == class { 2.0 } else { 0.0 };
                        *v = (rng.random_range(-0.5..0.5f64) + offset) as f32;
                    }
                    inputs.push(t);
                    labels.push(class);
                }
            }
            LabeledSet::new(inputs, labels)
        };
        (make(n_per_class), make(n_per_class / 3))
    }

    #[test]
    fn xvec_trains_to_high_accuracy_on_separable_data() {
        let (train_set, valid_set) = separable_set(20, 42);
        let mut model = build_model::<f32>(Topology::Xvec1d, 1, 80, 100, 7).unwrap();
        let config = TrainConfig {
            max_epochs: 12,
            batch_size: 16,
            seed: 7,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &train_set, &valid_set, &config).unwrap();
        let last = history.epochs.last().unwrap();
        let best_acc = history
            .epochs
            .iter()
            .map(|e| e.valid_acc)
            .fold(0.0f64, f64::max);
        assert!(
            best_acc >= 0.95,
            "validation accuracy {best_acc} after {} epochs (last loss {})",
            history.epochs.len(),
            last.valid_loss
        );
        // lr never leaves the configured sequence
        let lrs = config.lr_sequence();
        assert!(history.epochs.iter().all(|e| lrs.contains(&e.lr)));
    }

    #[test]
    fn training_restores_the_best_parameters() {
        let (train_set, valid_set) = separable_set(10, 3);
        let mut model = build_model::<f32>(Topology::Xvec1d, 1, 80, 100, 8).unwrap();
        let config = TrainConfig {
            max_epochs: 6,
            batch_size: 10,
            seed: 3,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &train_set, &valid_set, &config).unwrap();
        let (final_loss, _) = evaluate_loss(&mut model, &valid_set, 16).unwrap();
        assert!(
            (final_loss - history.best_valid_loss).abs() < 1e-6,
            "restored loss {final_loss} vs best {}",
            history.best_valid_loss
        );
        // never worse than any recorded epoch
        for e in &history.epochs {
            assert!(final_loss <= e.valid_loss + 1e-6);
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (train_set, valid_set) = separable_set(8, 5);
        let run = || {
            let mut model = build_model::<f32>(Topology::Xvec1d, 1, 80, 100, 11).unwrap();
            let config = TrainConfig {
                max_epochs: 3,
                batch_size: 8,
                seed: 5,
                ..TrainConfig::default()
            };
            let history = train(&mut model, &train_set, &valid_set, &config).unwrap();
            history.epochs.iter().map(|e| e.valid_loss).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
