//! The non-convolutional layers: batch norm, ReLU, max/average pooling,
//! dropout, dense, softmax and temporal statistics pooling.
//!
//! Tensors are taken by value, so element-wise layers transform their input
//! in place and caches reuse moved buffers instead of cloning activations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::tensor::{Real, Tensor};
use super::{Layer, LayerDesc, Mode, NnError, Param};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;

/// Batch normalization over the channel axis.
///
/// Accepts `[B, C]`, `[B, C, T]` or `[B, C, H, W]`; statistics are taken per
/// channel over batch and any spatial/time axes. Training mode uses batch
/// statistics (population variance) and updates running stats with momentum
/// 0.9; inference mode uses the running stats.
pub struct BatchNorm<T: Real> {
    features: usize,
    gamma: Param<T>,
    beta: Param<T>,
    running_mean: Tensor<T>,
    running_var: Tensor<T>,
    cache: Option<BnCache<T>>,
}

struct BnCache<T: Real> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(features: usize) -> Self {
        BatchNorm {
            features,
            gamma: Param::new(Tensor::from_vec(&[features], vec![T::ONE; features])),
            beta: Param::new(Tensor::zeros(&[features])),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::from_vec(&[features], vec![T::ONE; features]),
            cache: None,
        }
    }

    fn dims(&self, input: &Tensor<T>) -> Result<(usize, usize), NnError> {
        let shape = &input.shape;
        if shape.len() < 2 || shape[1] != self.features {
            return Err(NnError::ShapeMismatch {
                layer: "batch_norm",
                expected: format!("[B, {}, ...]", self.features),
                got: format!("{shape:?}"),
            });
        }
        Ok((shape[0], shape[2..].iter().product::<usize>().max(1)))
    }
}

impl<T: Real> Layer<T> for BatchNorm<T> {
    fn forward(&mut self, mut input: Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let (b, s) = self.dims(&input)?;
        let c = self.features;

        match mode {
            Mode::Train => {
                if b < 2 {
                    return Err(NnError::BatchTooSmall);
                }
                let n = T::of((b * s) as f64);
                let mut mean = vec![T::ZERO; c];
                let mut var = vec![T::ZERO; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let at = (bi * c + ci) * s;
                        for v in &input.data[at..at + s] {
                            mean[ci] += *v;
                        }
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                for bi in 0..b {
                    for ci in 0..c {
                        let at = (bi * c + ci) * s;
                        let m = mean[ci];
                        for v in &input.data[at..at + s] {
                            let d = *v - m;
                            var[ci] += d * d;
                        }
                    }
                }
                var.iter_mut().for_each(|v| *v /= n);

                let inv_std: Vec<T> =
                    var.iter().map(|&v| T::ONE / (v + T::of(BN_EPS)).sqrt()).collect();
                let mut normalized = input.zeros_like();
                for bi in 0..b {
                    for ci in 0..c {
                        let at = (bi * c + ci) * s;
                        let (m, is) = (mean[ci], inv_std[ci]);
                        let (g, be) = (self.gamma.value.data[ci], self.beta.value.data[ci]);
                        for i in at..at + s {
                            let xn = (input.data[i] - m) * is;
                            normalized.data[i] = xn;
                            input.data[i] = g * xn + be;
                        }
                    }
                }
                let momentum = T::of(BN_MOMENTUM);
                let one_minus = T::ONE - momentum;
                for ci in 0..c {
                    self.running_mean.data[ci] =
                        momentum * self.running_mean.data[ci] + one_minus * mean[ci];
                    self.running_var.data[ci] =
                        momentum * self.running_var.data[ci] + one_minus * var[ci];
                }
                self.cache = Some(BnCache { normalized, inv_std });
            }
            Mode::Eval => {
                for bi in 0..b {
                    for ci in 0..c {
                        let at = (bi * c + ci) * s;
                        let m = self.running_mean.data[ci];
                        let is = T::ONE / (self.running_var.data[ci] + T::of(BN_EPS)).sqrt();
                        let (g, be) = (self.gamma.value.data[ci], self.beta.value.data[ci]);
                        for v in &mut input.data[at..at + s] {
                            *v = g * (*v - m) * is + be;
                        }
                    }
                }
            }
        }
        Ok(input)
    }

    fn backward(&mut self, mut grad_output: Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self.cache.take().ok_or(NnError::NoForwardCache)?;
        if grad_output.shape != cache.normalized.shape {
            return Err(NnError::ShapeMismatch {
                layer: "batch_norm backward",
                expected: format!("{:?}", cache.normalized.shape),
                got: format!("{:?}", grad_output.shape),
            });
        }
        let c = self.features;
        let b = grad_output.shape[0];
        let s = grad_output.shape[2..].iter().product::<usize>().max(1);
        let n = T::of((b * s) as f64);

        // per-channel reductions: sum(dy), sum(dy * xn)
        let mut sum_dy = vec![T::ZERO; c];
        let mut sum_dy_xn = vec![T::ZERO; c];
        for bi in 0..b {
            for ci in 0..c {
                let at = (bi * c + ci) * s;
                for i in at..at + s {
                    sum_dy[ci] += grad_output.data[i];
                    sum_dy_xn[ci] += grad_output.data[i] * cache.normalized.data[i];
                }
            }
        }
        for ci in 0..c {
            self.gamma.grad.data[ci] = sum_dy_xn[ci];
            self.beta.grad.data[ci] = sum_dy[ci];
        }

        for bi in 0..b {
            for ci in 0..c {
                let at = (bi * c + ci) * s;
                let g = self.gamma.value.data[ci];
                let is = cache.inv_std[ci];
                let mean_dy = sum_dy[ci] / n;
                let mean_dy_xn = sum_dy_xn[ci] / n;
                for i in at..at + s {
                    let xn = cache.normalized.data[i];
                    grad_output.data[i] =
                        g * is * (grad_output.data[i] - mean_dy - xn * mean_dy_xn);
                }
            }
        }
        Ok(grad_output)
    }

    fn descriptor(&self) -> LayerDesc {
        LayerDesc::BatchNorm { features: self.features }
    }

    fn params(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn state(&self) -> Vec<&Tensor<T>> {
        vec![&self.running_mean, &self.running_var]
    }

    fn state_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.running_mean, &mut self.running_var]
    }
}

/// Rectified linear unit; backward masks by the sign of the kept input.
#[derive(Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Relu { mask: None }
    }
}

impl<T: Real> Layer<T> for Relu {
    fn forward(&mut self, mut input: Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        if mode == Mode::Train {
            let mut mask = vec![false; input.data.len()];
            for (v, m) in input.data.iter_mut().zip(mask.iter_mut()) {
                if *v > T::ZERO {
                    *m = true;
                } else {
                    *v = T::ZERO;
                }
            }
            self.mask = Some(mask);
        } else {
            input.data.iter_mut().for_each(|v| *v = v.max_with(T::ZERO));
        }
        Ok(input)
    }

    fn backward(&mut self, mut grad_output: Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mask = self.mask.as_ref().ok_or(NnError::NoForwardCache)?;
        if mask.len() != grad_output.data.len() {
            return Err(NnError::ShapeMismatch {
                layer: "relu backward",
                expected: format!("{} values", mask.len()),
                got: format!("{} values", grad_output.data.len()),
            });
        }
        for (g, &keep) in grad_output.data.iter_mut().zip(mask) {
            if !keep {
                *g = T::ZERO;
            }
        }
        Ok(grad_output)
    }

    fn descriptor(&self) -> LayerDesc {
        LayerDesc::Relu
    }
}

/// Non-overlapping max pooling over `[B, C, H, W]`; floor division on odd
/// remainders, gradient routed to the first-occurrence argmax.
pub struct MaxPool2d {
    wh: usize,
    ww: usize,
    cache: Option<PoolCache>,
}

struct PoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<u32>,
}

impl MaxPool2d {
    pub fn new(wh: usize, ww: usize) -> Self {
        assert!(wh > 0 && ww > 0, "pool window must be positive");
        MaxPool2d { wh, ww, cache: None }
    }
}

impl<T: Real> Layer<T> for MaxPool2d {
    fn forward(&mut self, input: Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let &[b, c, h, w] = input.shape.as_slice() else {
            return Err(NnError::ShapeMismatch {
                layer: "max_pool2d",
                expected: "[B, C, H, W]".into(),
                got: format!("{:?}", input.shape),
            });
        };
        if self.wh > h || self.ww > w {
            return Err(NnError::PoolWindowTooLarge { wh: self.wh, ww: self.ww, h, w });
        }
        let (oh, ow) = (h / self.wh, w / self.ww);
        let mut output = Tensor::zeros(&[b, c, oh, ow]);
        let mut argmax = vec![0u32; b * c * oh * ow];
        for bi in 0..b {
            for ci in 0..c {
                let plane = &input.data[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = T::neg_infinity();
                        let mut best_at = 0usize;
                        for dy in 0..self.wh {
                            let y = oy * self.wh + dy;
                            for dx in 0..self.ww {
                                let x = ox * self.ww + dx;
                                let v = plane[y * w + x];
                                if v > best {
                                    best = v;
                                    best_at = y * w + x;
                                }
                            }
                        }
                        let out_at = ((bi * c + ci) * oh + oy) * ow + ox;
                        output.data[out_at] = best;
                        argmax[out_at] = best_at as u32;
                    }
                }
            }
        }
        if mode == Mode::Train {
            self.cache = Some(PoolCache { input_shape: input.shape.clone(), argmax });
        }
        Ok(output)
    }

    fn backward(&mut self, grad_output: Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self.cache.take().ok_or(NnError::NoForwardCache)?;
        let &[b, c, h, w] = cache.input_shape.as_slice() else {
            return Err(NnError::NoForwardCache);
        };
        let (oh, ow) = (h / self.wh, w / self.ww);
        let mut grad_input = Tensor::zeros(&cache.input_shape);
        for bi in 0..b {
            for ci in 0..c {
                let base_in = (bi * c + ci) * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let out_at = ((bi * c + ci) * oh + oy) * ow + ox;
                        grad_input.data[base_in + cache.argmax[out_at] as usize] +=
                            grad_output.data[out_at];
                    }
                }
            }
        }
        Ok(grad_input)
    }

    fn descriptor(&self) -> LayerDesc {
        LayerDesc::MaxPool2d { h: self.wh, w: self.ww }
    }
}

/// Inverted dropout: retained units are scaled by 1/(1−p) in training;
/// identity in inference. Masks come from an own ChaCha stream so training
/// runs are reproducible.
pub struct Dropout {
    p: f64,
    rng: ChaCha12Rng,
    mask: Option<Vec<bool>>,
}

impl Dropout {
    pub fn new(p: f64, seed: u64) -> Self {
        assert!((0.0..1.0).contains(&p), "drop probability must lie in [0, 1)");
        Dropout { p, rng: ChaCha12Rng::seed_from_u64(seed), mask: None }
    }
}

impl<T: Real> Layer<T> for Dropout {
    fn forward(&mut self, mut input: Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        if mode == Mode::Eval || self.p == 0.0 {
            self.mask = None;
            return Ok(input);
        }
        let keep = 1.0 - self.p;
        let scale = T::of(1.0 / keep);
        let mut mask = vec![false; input.data.len()];
        for (v, m) in input.data.iter_mut().zip(mask.iter_mut()) {
            if self.rng.random_range(0.0..1.0) < keep {
                *m = true;
                *v *= scale;
            } else {
                *v = T::ZERO;
            }
        }
        self.mask = Some(mask);
        Ok(input)
    }

    fn backward(&mut self, mut grad_output: Tensor<T>) -> Result<Tensor<T>, NnError> {
        match &self.mask {
            None => Ok(grad_output),
            Some(mask) => {
                let scale = T::of(1.0 / (1.0 - self.p));
                for (g, &m) in grad_output.data.iter_mut().zip(mask) {
                    *g = if m { *g * scale } else { T::ZERO };
                }
                Ok(grad_output)
            }
        }
    }

    fn descriptor(&self) -> LayerDesc {
        LayerDesc::Dropout { p: self.p }
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha12Rng::seed_from_u64(seed);
    }
}

/// Mean over the spatial axes: `[B, C, H, W]` → `[B, C]`.
#[derive(Default)]
pub struct GlobalAvgPool2d {
    input_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool2d {
    pub fn new() -> Self {
        GlobalAvgPool2d { input_shape: None }
    }
}

impl<T: Real> Layer<T> for GlobalAvgPool2d {
    fn forward(&mut self, input: Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let &[b, c, h, w] = input.shape.as_slice() else {
            return Err(NnError::ShapeMismatch {
                layer: "global_avg_pool2d",
                expected: "[B, C, H, W]".into(),
                got: format!("{:?}", input.shape),
            });
        };
        let inv = T::of(1.0 / (h * w) as f64);
        let mut output = Tensor::zeros(&[b, c]);
        for bi in 0..b {
            for ci in 0..c {
                let at = (bi * c + ci) * h * w;
                let mut acc = T::ZERO;
                for v in &input.data[at..at + h * w] {
                    acc += *v;
                }
                output.data[bi * c + ci] = acc * inv;
            }
        }
        if mode == Mode::Train {
            self.input_shape = Some(input.shape.clone());
        }
        Ok(output)
    }

    fn backward(&mut self, grad_output: Tensor<T>) -> Result<Tensor<T>, NnError> {
        let shape = self.input_shape.take().ok_or(NnError::NoForwardCache)?;
        let &[b, c, h, w] = shape.as_slice() else {
            return Err(NnError::NoForwardCache);
        };
        let inv = T::of(1.0 / (h * w) as f64);
        let mut grad_input = Tensor::zeros(&shape);
        for bi in 0..b {
            for ci in 0..c {
                let g = grad_output.data[bi * c + ci] * inv;
                let at = (bi * c + ci) * h * w;
                grad_input.data[at..at + h * w].iter_mut().for_each(|v| *v = g);
            }
        }
        Ok(grad_input)
    }

    fn descriptor(&self) -> LayerDesc {
        LayerDesc::GlobalAvgPool2d
    }
}

/// Fully connected layer: `y = W x + b` with `W: [outputs, inputs]`.
/// Batch items go through independent per-sample products, so inference is
/// batch-invariant bit for bit.
pub struct Dense<T: Real> {
    inputs: usize,
    outputs: usize,
    weight: Param<T>,
    bias: Param<T>,
    cached_input: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        let data = (0..outputs * inputs)
            .map(|_| T::of(rng.random_range(-limit..limit)))
            .collect();
        Dense {
            inputs,
            outputs,
            weight: Param::new(Tensor::from_vec(&[outputs, inputs], data)),
            bias: Param::new(Tensor::zeros(&[outputs])),
            cached_input: None,
        }
    }
}

impl<T: Real> Layer<T> for Dense<T> {
    fn forward(&mut self, input: Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let &[b, n] = input.shape.as_slice() else {
            return Err(NnError::ShapeMismatch {
                layer: "dense",
                expected: format!("[B, {}]", self.inputs),
                got: format!("{:?}", input.shape),
            });
        };
        if n != self.inputs {
            return Err(NnError::ShapeMismatch {
                layer: "dense",
                expected: format!("[B, {}]", self.inputs),
                got: format!("{:?}", input.shape),
            });
        }
        let mut output = Tensor::zeros(&[b, self.outputs]);
        let w = &self.weight.value.data;
        for bi in 0..b {
            let x = input.item(bi);
            let y = output.item_mut(bi);
            T::gemm_rm(self.outputs, n, 1, T::ONE, w, x, T::ZERO, y);
            for (yo, bv) in y.iter_mut().zip(&self.bias.value.data) {
                *yo += *bv;
            }
        }
        if mode == Mode::Train {
            self.cached_input = Some(input);
        }
        Ok(output)
    }

    fn backward(&mut self, grad_output: Tensor<T>) -> Result<Tensor<T>, NnError> {
        let input = self.cached_input.take().ok_or(NnError::NoForwardCache)?;
        let b = input.batch();
        if grad_output.shape != [b, self.outputs] {
            return Err(NnError::ShapeMismatch {
                layer: "dense backward",
                expected: format!("[{b}, {}]", self.outputs),
                got: format!("{:?}", grad_output.shape),
            });
        }
        let n = self.inputs;
        let dw = &mut self.weight.grad.data;
        let db = &mut self.bias.grad.data;
        dw.iter_mut().for_each(|v| *v = T::ZERO);
        db.iter_mut().for_each(|v| *v = T::ZERO);
        let mut grad_input = Tensor::zeros(&input.shape);
        let w = &self.weight.value.data;
        for bi in 0..b {
            let x = input.item(bi);
            let g = grad_output.item(bi);
            for o in 0..self.outputs {
                let go = g[o];
                db[o] += go;
                let row = &mut dw[o * n..(o + 1) * n];
                for (d, &xv) in row.iter_mut().zip(x) {
                    *d += go * xv;
                }
            }
            let gi = grad_input.item_mut(bi);
            for o in 0..self.outputs {
                let go = g[o];
                let row = &w[o * n..(o + 1) * n];
                for (giv, &wv) in gi.iter_mut().zip(row) {
                    *giv += go * wv;
                }
            }
        }
        Ok(grad_input)
    }

    fn descriptor(&self) -> LayerDesc {
        LayerDesc::Dense { inputs: self.inputs, outputs: self.outputs }
    }

    fn params(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Row-wise softmax over the last axis of `[B, N]`, with max subtraction.
#[derive(Default)]
pub struct Softmax<T: Real> {
    cached_output: Option<Tensor<T>>,
}

impl<T: Real> Softmax<T> {
    pub fn new() -> Self {
        Softmax { cached_output: None }
    }
}

impl<T: Real> Layer<T> for Softmax<T> {
    fn forward(&mut self, mut input: Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let &[b, _n] = input.shape.as_slice() else {
            return Err(NnError::ShapeMismatch {
                layer: "softmax",
                expected: "[B, N]".into(),
                got: format!("{:?}", input.shape),
            });
        };
        for bi in 0..b {
            super::loss::softmax_in_place(input.item_mut(bi));
        }
        if mode == Mode::Train {
            self.cached_output = Some(input.clone());
        }
        Ok(input)
    }

    fn backward(&mut self, grad_output: Tensor<T>) -> Result<Tensor<T>, NnError> {
        let out = self.cached_output.take().ok_or(NnError::NoForwardCache)?;
        let mut grad_input = grad_output.zeros_like();
        let b = out.batch();
        for bi in 0..b {
            let p = out.item(bi);
            let g = grad_output.item(bi);
            let dot: T = p.iter().zip(g).fold(T::ZERO, |acc, (&pi, &gi)| acc + pi * gi);
            let gi_row = grad_input.item_mut(bi);
            for i in 0..p.len() {
                gi_row[i] = p[i] * (g[i] - dot);
            }
        }
        Ok(grad_input)
    }

    fn descriptor(&self) -> LayerDesc {
        LayerDesc::Softmax
    }
}

const STATS_VAR_FLOOR: f64 = 1e-10;

/// Statistics pooling: `[B, C, T]` → `[B, 2C]`, concatenating per-channel
/// mean and standard deviation over time (population convention,
/// `std = sqrt(var + 1e-10)`).
#[derive(Default)]
pub struct StatsPool<T: Real> {
    cache: Option<StatsCache<T>>,
}

struct StatsCache<T: Real> {
    input: Tensor<T>,
    mean: Vec<T>,
    std: Vec<T>,
}

impl<T: Real> StatsPool<T> {
    pub fn new() -> Self {
        StatsPool { cache: None }
    }
}

impl<T: Real> Layer<T> for StatsPool<T> {
    fn forward(&mut self, input: Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let &[b, c, t] = input.shape.as_slice() else {
            return Err(NnError::ShapeMismatch {
                layer: "stats_pool",
                expected: "[B, C, T]".into(),
                got: format!("{:?}", input.shape),
            });
        };
        if t < 2 {
            return Err(NnError::TooFewFrames(t));
        }
        let inv_t = T::of(1.0 / t as f64);
        let mut output = Tensor::zeros(&[b, 2 * c]);
        let mut mean = vec![T::ZERO; b * c];
        let mut std = vec![T::ZERO; b * c];
        for bi in 0..b {
            for ci in 0..c {
                let at = (bi * c + ci) * t;
                let line = &input.data[at..at + t];
                let mut m = T::ZERO;
                for v in line {
                    m += *v;
                }
                m *= inv_t;
                let mut var = T::ZERO;
                for v in line {
                    let d = *v - m;
                    var += d * d;
                }
                var *= inv_t;
                let sd = (var + T::of(STATS_VAR_FLOOR)).sqrt();
                mean[bi * c + ci] = m;
                std[bi * c + ci] = sd;
                output.data[bi * 2 * c + ci] = m;
                output.data[bi * 2 * c + c + ci] = sd;
            }
        }
        if mode == Mode::Train {
            self.cache = Some(StatsCache { input, mean, std });
        }
        Ok(output)
    }

    fn backward(&mut self, grad_output: Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self.cache.take().ok_or(NnError::NoForwardCache)?;
        let &[b, c, t] = cache.input.shape.as_slice() else {
            return Err(NnError::NoForwardCache);
        };
        if grad_output.shape != [b, 2 * c] {
            return Err(NnError::ShapeMismatch {
                layer: "stats_pool backward",
                expected: format!("[{b}, {}]", 2 * c),
                got: format!("{:?}", grad_output.shape),
            });
        }
        let inv_t = T::of(1.0 / t as f64);
        let mut grad_input = cache.input.zeros_like();
        for bi in 0..b {
            for ci in 0..c {
                let at = (bi * c + ci) * t;
                let g_mean = grad_output.data[bi * 2 * c + ci];
                let g_std = grad_output.data[bi * 2 * c + c + ci];
                let m = cache.mean[bi * c + ci];
                let sd = cache.std[bi * c + ci];
                for i in 0..t {
                    let x = cache.input.data[at + i];
                    // d std / d x_i = (x_i − mean) / (T · std)
                    grad_input.data[at + i] =
                        g_mean * inv_t + g_std * (x - m) * inv_t / sd;
                }
            }
        }
        Ok(grad_input)
    }

    fn descriptor(&self) -> LayerDesc {
        LayerDesc::StatsPool
    }
}
