//! Finite-difference verification of layer backward passes.
//!
//! Central differences with step 1e-5 at 64-bit precision against the
//! analytic backward, over a random linear functional of the outputs.
//! Layers with RNG state (dropout) are reseeded before every forward so the
//! mask is frozen across evaluations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::tensor::Tensor;
use super::{BatchNorm, Conv1d, Conv2d, Dense, Dropout, GlobalAvgPool2d, Layer, MaxPool2d, Mode, NnError, Relu, Softmax, StatsPool};

const FD_STEP: f64 = 1e-5;
/// Elements checked per tensor; larger tensors are subsampled.
const MAX_CHECKS: usize = 200;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub layer: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Guarded relative error; small-magnitude pairs compare against 1e-4.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

fn loss_coefficients(n: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let scale = 1.0 / (n as f64).sqrt();
    (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect()
}

fn loss_value(output: &Tensor<f64>, coeff: &[f64]) -> f64 {
    output.data.iter().zip(coeff).map(|(&y, &c)| y * c).sum()
}

fn check_indices(len: usize, rng: &mut ChaCha12Rng) -> Vec<usize> {
    if len <= MAX_CHECKS {
        (0..len).collect()
    } else {
        rand::seq::index::sample(rng, len, MAX_CHECKS).into_iter().collect()
    }
}

/// Verify one layer's backward pass against central finite differences.
///
/// Checks the gradient with respect to the input and to every parameter
/// tensor; returns the largest guarded relative error observed.
pub fn grad_check(
    layer: &mut dyn Layer<f64>,
    input: &Tensor<f64>,
    seed: u64,
) -> Result<GradCheckReport, NnError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xC0FF_EE00);

    layer.reseed(seed);
    let probe = layer.forward(input.clone(), Mode::Train)?;
    let coeff = loss_coefficients(probe.scalar_count(), &mut rng);

    // analytic pass
    layer.reseed(seed);
    let output = layer.forward(input.clone(), Mode::Train)?;
    let grad_out = Tensor::from_vec(&output.shape, coeff.clone());
    let analytic_input = layer.backward(grad_out)?;
    let analytic_params: Vec<Tensor<f64>> =
        layer.params().iter().map(|p| p.grad.clone()).collect();

    let name = format!("{:?}", layer.descriptor());
    let mut max_err = 0.0f64;
    let mut checked = 0usize;

    // d loss / d input
    let mut x = input.clone();
    for i in check_indices(x.scalar_count(), &mut rng) {
        let keep = x.data[i];
        x.data[i] = keep + FD_STEP;
        layer.reseed(seed);
        let lp = loss_value(&layer.forward(x.clone(), Mode::Train)?, &coeff);
        x.data[i] = keep - FD_STEP;
        layer.reseed(seed);
        let lm = loss_value(&layer.forward(x.clone(), Mode::Train)?, &coeff);
        x.data[i] = keep;
        let numeric = (lp - lm) / (2.0 * FD_STEP);
        max_err = max_err.max(rel_err(analytic_input.data[i], numeric));
        checked += 1;
    }

    // d loss / d params
    let n_params = analytic_params.len();
    for pi in 0..n_params {
        let indices = {
            let len = layer.params()[pi].value.scalar_count();
            check_indices(len, &mut rng)
        };
        for i in indices {
            let keep = layer.params()[pi].value.data[i];
            layer.params()[pi].value.data[i] = keep + FD_STEP;
            layer.reseed(seed);
            let lp = loss_value(&layer.forward(input.clone(), Mode::Train)?, &coeff);
            layer.params()[pi].value.data[i] = keep - FD_STEP;
            layer.reseed(seed);
            let lm = loss_value(&layer.forward(input.clone(), Mode::Train)?, &coeff);
            layer.params()[pi].value.data[i] = keep;
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            max_err = max_err.max(rel_err(analytic_params[pi].data[i], numeric));
            checked += 1;
        }
    }

    Ok(GradCheckReport { layer: name, max_rel_err: max_err, checked })
}

/// Smooth random input: uniform in (-2, 2).
pub fn smooth_input(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    Tensor::from_vec(shape, data)
}

/// Input for kinked layers (ReLU): values kept at least 1e-2 from zero so a
/// 1e-5 step never crosses the kink.
pub fn kink_safe_input(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut t = smooth_input(shape, seed);
    for v in t.data.iter_mut() {
        if v.abs() < 1e-2 {
            *v = if *v >= 0.0 { *v + 1e-2 } else { *v - 1e-2 };
        }
    }
    t
}

/// Input for max pooling: a shuffled lattice with spacing 0.01 plus jitter
/// below 1e-3, so window maxima are separated well beyond the FD step for
/// every seed.
pub fn tie_free_input(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = shape.iter().product::<usize>();
    let mut values: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    use rand::seq::SliceRandom;
    values.shuffle(&mut rng);
    for v in values.iter_mut() {
        *v += rng.random_range(-1e-3..1e-3);
    }
    Tensor::from_vec(shape, values)
}

/// Gradient-check every layer kind used by the two topologies at toy shapes.
pub fn standard_layer_checks(seed: u64) -> Result<Vec<GradCheckReport>, NnError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    let mut conv2d = Conv2d::<f64>::new(2, 3, 3, 3, &mut rng);
    reports.push(grad_check(&mut conv2d, &smooth_input(&[2, 2, 6, 7], seed), seed)?);

    let mut conv2d_wide = Conv2d::<f64>::new(1, 2, 7, 11, &mut rng);
    reports.push(grad_check(&mut conv2d_wide, &smooth_input(&[2, 1, 9, 13], seed), seed)?);

    let mut conv1d = Conv1d::<f64>::new(3, 4, 5, &mut rng);
    reports.push(grad_check(&mut conv1d, &smooth_input(&[2, 3, 11], seed), seed)?);

    let mut conv1d_pt = Conv1d::<f64>::new(4, 3, 1, &mut rng);
    reports.push(grad_check(&mut conv1d_pt, &smooth_input(&[2, 4, 6], seed), seed)?);

    let mut bn = BatchNorm::<f64>::new(3);
    // move gamma/beta off their init so the check exercises both
    for p in bn.params() {
        for v in p.value.data.iter_mut() {
            *v += 0.3;
        }
    }
    reports.push(grad_check(&mut bn, &smooth_input(&[4, 3, 2, 2], seed), seed)?);

    let mut bn1d = BatchNorm::<f64>::new(4);
    reports.push(grad_check(&mut bn1d, &smooth_input(&[3, 4, 5], seed), seed)?);

    let mut relu = Relu::new();
    reports.push(grad_check(&mut relu as &mut dyn Layer<f64>, &kink_safe_input(&[2, 3, 4, 4], seed), seed)?);

    let mut pool = MaxPool2d::new(2, 3);
    reports.push(grad_check(&mut pool as &mut dyn Layer<f64>, &tie_free_input(&[2, 2, 4, 6], seed), seed)?);

    let mut dropout = Dropout::new(0.15, seed);
    reports.push(grad_check(&mut dropout as &mut dyn Layer<f64>, &smooth_input(&[2, 5, 4], seed), seed)?);

    let mut gap = GlobalAvgPool2d::new();
    reports.push(grad_check(&mut gap as &mut dyn Layer<f64>, &smooth_input(&[2, 3, 4, 5], seed), seed)?);

    let mut dense = Dense::<f64>::new(5, 4, &mut rng);
    reports.push(grad_check(&mut dense, &smooth_input(&[3, 5], seed), seed)?);

    let mut softmax = Softmax::<f64>::new();
    reports.push(grad_check(&mut softmax, &smooth_input(&[2, 6], seed), seed)?);

    let mut stats = StatsPool::<f64>::new();
    reports.push(grad_check(&mut stats, &smooth_input(&[2, 3, 7], seed), seed)?);

    Ok(reports)
}
