//! 2-D and 1-D convolution layers (cross-correlation, "same" zero padding,
//! stride 1), implemented as im2col + GEMM.
//!
//! Batch items are processed through independent per-sample GEMMs, in
//! parallel over fixed-size chunks; weight-gradient partials are reduced in
//! chunk order so results are byte-identical for any worker count.

use rand::Rng;
use rayon::prelude::*;

use super::tensor::{Real, Tensor};
use super::{Layer, LayerDesc, Mode, NnError, Param};

/// Samples per parallel chunk; fixed so reductions are order-stable.
const CHUNK: usize = 8;

fn he_uniform<T: Real, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / fan_in as f64).sqrt();
    let data = (0..shape.iter().product::<usize>())
        .map(|_| T::of(rng.random_range(-limit..limit)))
        .collect();
    Tensor::from_vec(shape, data)
}

pub struct Conv2d<T: Real> {
    in_ch: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    /// `[out_ch, in_ch * kh * kw]`
    weight: Param<T>,
    bias: Param<T>,
    cached_input: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, kh: usize, kw: usize, rng: &mut R) -> Self {
        let fan_in = in_ch * kh * kw;
        Conv2d {
            in_ch,
            out_ch,
            kh,
            kw,
            weight: Param::new(he_uniform(&[out_ch, fan_in], fan_in, rng)),
            bias: Param::new(Tensor::zeros(&[out_ch])),
            cached_input: None,
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(usize, usize, usize), NnError> {
        match input.shape.as_slice() {
            &[b, c, h, w] if c == self.in_ch => Ok((b, h, w)),
            shape => Err(NnError::ShapeMismatch {
                layer: "conv2d",
                expected: format!("[B, {}, H, W]", self.in_ch),
                got: format!("{shape:?}"),
            }),
        }
    }
}

/// Expand one sample `[C, H, W]` into `[C*kh*kw, H*W]` patch columns with
/// zero padding keeping the spatial size.
fn im2col_2d<T: Real>(
    sample: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    cols: &mut [T],
) {
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let hw = h * w;
    debug_assert_eq!(cols.len(), c_in * kh * kw * hw);
    for c in 0..c_in {
        let plane = &sample[c * hw..(c + 1) * hw];
        for dy in 0..kh {
            for dx in 0..kw {
                let row = ((c * kh + dy) * kw + dx) * hw;
                // y + dy - ph in [0, h) → y in [ph - dy, h + ph - dy)
                let y0 = ph.saturating_sub(dy);
                let y1 = (h + ph).saturating_sub(dy).min(h);
                let x0 = pw.saturating_sub(dx);
                let x1 = (w + pw).saturating_sub(dx).min(w);
                cols[row..row + y0 * w].iter_mut().for_each(|v| *v = T::ZERO);
                for y in y0..y1 {
                    let sy = y + dy - ph;
                    let dst = row + y * w;
                    cols[dst..dst + x0].iter_mut().for_each(|v| *v = T::ZERO);
                    if x1 > x0 {
                        let src = sy * w + (x0 + dx - pw);
                        cols[dst + x0..dst + x1]
                            .copy_from_slice(&plane[src..src + (x1 - x0)]);
                    }
                    cols[dst + x1..dst + w].iter_mut().for_each(|v| *v = T::ZERO);
                }
                cols[row + y1 * w..row + hw].iter_mut().for_each(|v| *v = T::ZERO);
            }
        }
    }
}

/// Transpose of im2col: scatter patch-column gradients back onto the padded
/// input grid.
fn col2im_2d<T: Real>(
    cols: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sample_grad: &mut [T],
) {
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let hw = h * w;
    for c in 0..c_in {
        let plane = &mut sample_grad[c * hw..(c + 1) * hw];
        for dy in 0..kh {
            for dx in 0..kw {
                let row = ((c * kh + dy) * kw + dx) * hw;
                let y0 = ph.saturating_sub(dy);
                let y1 = (h + ph).saturating_sub(dy).min(h);
                for y in y0..y1 {
                    let sy = y + dy - ph;
                    let x0 = pw.saturating_sub(dx);
                    let x1 = (w + pw).saturating_sub(dx).min(w);
                    for x in x0..x1 {
                        plane[sy * w + (x + dx - pw)] += cols[row + y * w + x];
                    }
                }
            }
        }
    }
}

impl<T: Real> Layer<T> for Conv2d<T> {
    fn forward(&mut self, input: Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let (b, h, w) = self.check_input(&input)?;
        let hw = h * w;
        let k = self.in_ch * self.kh * self.kw;
        let mut output = Tensor::zeros(&[b, self.out_ch, h, w]);
        let weight = &self.weight.value.data;
        let bias = &self.bias.value.data;
        let item_in = input.item_len();

        output
            .data
            .par_chunks_mut(CHUNK * self.out_ch * hw)
            .enumerate()
            .for_each(|(chunk_idx, out_chunk)| {
                let mut cols = vec![T::ZERO; k * hw];
                for (s, out_item) in out_chunk.chunks_mut(self.out_ch * hw).enumerate() {
                    let sample = chunk_idx * CHUNK + s;
                    let item = &input.data[sample * item_in..(sample + 1) * item_in];
                    im2col_2d(item, self.in_ch, h, w, self.kh, self.kw, &mut cols);
                    T::gemm_rm(self.out_ch, k, hw, T::ONE, weight, &cols, T::ZERO, out_item);
                    for oc in 0..self.out_ch {
                        let bv = bias[oc];
                        out_item[oc * hw..(oc + 1) * hw].iter_mut().for_each(|v| *v += bv);
                    }
                }
            });

        if mode == Mode::Train {
            self.cached_input = Some(input);
        }
        Ok(output)
    }

    fn backward(&mut self, grad_output: Tensor<T>) -> Result<Tensor<T>, NnError> {
        let input = self.cached_input.take().ok_or(NnError::NoForwardCache)?;
        let (b, h, w) = self.check_input(&input)?;
        let hw = h * w;
        let k = self.in_ch * self.kh * self.kw;
        let expected = [b, self.out_ch, h, w];
        if grad_output.shape != expected {
            return Err(NnError::ShapeMismatch {
                layer: "conv2d backward",
                expected: format!("{expected:?}"),
                got: format!("{:?}", grad_output.shape),
            });
        }

        let weight = &self.weight.value.data;
        let item_in = input.item_len();
        let mut grad_input = Tensor::zeros(&input.shape);

        // Each chunk yields (dW, db) partials plus its grad-input slice.
        let partials: Vec<(Vec<T>, Vec<T>)> = grad_input
            .data
            .par_chunks_mut(CHUNK * item_in)
            .enumerate()
            .map(|(chunk_idx, gin_chunk)| {
                let mut dw = vec![T::ZERO; self.out_ch * k];
                let mut db = vec![T::ZERO; self.out_ch];
                let mut cols = vec![T::ZERO; k * hw];
                let mut dcols = vec![T::ZERO; k * hw];
                for (s, gin_item) in gin_chunk.chunks_mut(item_in).enumerate() {
                    let sample = chunk_idx * CHUNK + s;
                    let item = &input.data[sample * item_in..(sample + 1) * item_in];
                    let gout = grad_output.item(sample);
                    im2col_2d(item, self.in_ch, h, w, self.kh, self.kw, &mut cols);
                    // dW += gout [out_ch, hw] · colsᵀ [hw, k]; express as
                    // row-major gemm over cols viewed transposed via strides.
                    unsafe {
                        gemm_at_bt::<T>(self.out_ch, hw, k, gout, &cols, &mut dw);
                    }
                    for oc in 0..self.out_ch {
                        let mut acc = T::ZERO;
                        for &g in &gout[oc * hw..(oc + 1) * hw] {
                            acc += g;
                        }
                        db[oc] += acc;
                    }
                    // dcols = Wᵀ [k, out_ch] · gout [out_ch, hw]
                    unsafe {
                        gemm_ta_overwrite::<T>(k, self.out_ch, hw, weight, gout, &mut dcols);
                    }
                    col2im_2d(&dcols, self.in_ch, h, w, self.kh, self.kw, gin_item);
                }
                (dw, db)
            })
            .collect();

        let dw = &mut self.weight.grad.data;
        let db = &mut self.bias.grad.data;
        dw.iter_mut().for_each(|v| *v = T::ZERO);
        db.iter_mut().for_each(|v| *v = T::ZERO);
        for (pw, pb) in &partials {
            for (d, p) in dw.iter_mut().zip(pw) {
                *d += *p;
            }
            for (d, p) in db.iter_mut().zip(pb) {
                *d += *p;
            }
        }
        Ok(grad_input)
    }

    fn descriptor(&self) -> LayerDesc {
        LayerDesc::Conv2d { in_ch: self.in_ch, out_ch: self.out_ch, kh: self.kh, kw: self.kw }
    }

    fn params(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// `c += a · bᵀ` where a is m×l and b is n×l, both row-major; c is m×n.
///
/// # Safety
/// Slices must carry exactly the stated element counts.
unsafe fn gemm_at_bt<T: Real>(m: usize, l: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * l);
    debug_assert_eq!(b.len(), n * l);
    debug_assert_eq!(c.len(), m * n);
    // b viewed transposed: element (row, col) of bᵀ is b[col * l + row]
    gemm_strided(m, l, n, a, l as isize, 1, b, 1, l as isize, 1.0, c);
}

/// `c = aᵀ · b` (overwriting c) where a is n×m row-major and b is n×l
/// row-major; c is m×l.
///
/// # Safety
/// Slices must carry exactly the stated element counts.
unsafe fn gemm_ta_overwrite<T: Real>(m: usize, n: usize, l: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), n * m);
    debug_assert_eq!(b.len(), n * l);
    debug_assert_eq!(c.len(), m * l);
    gemm_strided(m, n, l, a, 1, m as isize, b, l as isize, 1, 0.0, c);
}

fn gemm_strided<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    rsa: isize,
    csa: isize,
    b: &[T],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [T],
) {
    // dispatch through the Real impl by materializing strided views is
    // wasteful; instead call matrixmultiply directly per type.
    use std::any::TypeId;
    if TypeId::of::<T>() == TypeId::of::<f32>() {
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr() as *const f32,
                rsa,
                csa,
                b.as_ptr() as *const f32,
                rsb,
                csb,
                beta as f32,
                c.as_mut_ptr() as *mut f32,
                n as isize,
                1,
            );
        }
    } else {
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr() as *const f64,
                rsa,
                csa,
                b.as_ptr() as *const f64,
                rsb,
                csb,
                beta,
                c.as_mut_ptr() as *mut f64,
                n as isize,
                1,
            );
        }
    }
}

pub struct Conv1d<T: Real> {
    in_ch: usize,
    out_ch: usize,
    k: usize,
    weight: Param<T>,
    bias: Param<T>,
    cached_input: Option<Tensor<T>>,
}

impl<T: Real> Conv1d<T> {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, k: usize, rng: &mut R) -> Self {
        let fan_in = in_ch * k;
        Conv1d {
            in_ch,
            out_ch,
            k,
            weight: Param::new(he_uniform(&[out_ch, fan_in], fan_in, rng)),
            bias: Param::new(Tensor::zeros(&[out_ch])),
            cached_input: None,
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(usize, usize), NnError> {
        match input.shape.as_slice() {
            &[b, c, t] if c == self.in_ch => Ok((b, t)),
            shape => Err(NnError::ShapeMismatch {
                layer: "conv1d",
                expected: format!("[B, {}, T]", self.in_ch),
                got: format!("{shape:?}"),
            }),
        }
    }
}

fn im2col_1d<T: Real>(sample: &[T], c_in: usize, t: usize, k: usize, cols: &mut [T]) {
    let pad = (k - 1) / 2;
    for c in 0..c_in {
        let line = &sample[c * t..(c + 1) * t];
        for dk in 0..k {
            let row = (c * k + dk) * t;
            let x0 = pad.saturating_sub(dk);
            let x1 = (t + pad).saturating_sub(dk).min(t);
            cols[row..row + x0].iter_mut().for_each(|v| *v = T::ZERO);
            if x1 > x0 {
                let src = x0 + dk - pad;
                cols[row + x0..row + x1].copy_from_slice(&line[src..src + (x1 - x0)]);
            }
            cols[row + x1..row + t].iter_mut().for_each(|v| *v = T::ZERO);
        }
    }
}

fn col2im_1d<T: Real>(cols: &[T], c_in: usize, t: usize, k: usize, sample_grad: &mut [T]) {
    let pad = (k - 1) / 2;
    for c in 0..c_in {
        let line = &mut sample_grad[c * t..(c + 1) * t];
        for dk in 0..k {
            let row = (c * k + dk) * t;
            let x0 = pad.saturating_sub(dk);
            let x1 = (t + pad).saturating_sub(dk).min(t);
            for x in x0..x1 {
                line[x + dk - pad] += cols[row + x];
            }
        }
    }
}

impl<T: Real> Layer<T> for Conv1d<T> {
    fn forward(&mut self, input: Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let (b, t) = self.check_input(&input)?;
        let k = self.in_ch * self.k;
        let mut output = Tensor::zeros(&[b, self.out_ch, t]);
        let weight = &self.weight.value.data;
        let bias = &self.bias.value.data;
        let item_in = input.item_len();

        output
            .data
            .par_chunks_mut(CHUNK * self.out_ch * t)
            .enumerate()
            .for_each(|(chunk_idx, out_chunk)| {
                let mut cols = vec![T::ZERO; k * t];
                for (s, out_item) in out_chunk.chunks_mut(self.out_ch * t).enumerate() {
                    let sample = chunk_idx * CHUNK + s;
                    let item = &input.data[sample * item_in..(sample + 1) * item_in];
                    im2col_1d(item, self.in_ch, t, self.k, &mut cols);
                    T::gemm_rm(self.out_ch, k, t, T::ONE, weight, &cols, T::ZERO, out_item);
                    for oc in 0..self.out_ch {
                        let bv = bias[oc];
                        out_item[oc * t..(oc + 1) * t].iter_mut().for_each(|v| *v += bv);
                    }
                }
            });

        if mode == Mode::Train {
            self.cached_input = Some(input);
        }
        Ok(output)
    }

    fn backward(&mut self, grad_output: Tensor<T>) -> Result<Tensor<T>, NnError> {
        let input = self.cached_input.take().ok_or(NnError::NoForwardCache)?;
        let (b, t) = self.check_input(&input)?;
        let k = self.in_ch * self.k;
        let expected = [b, self.out_ch, t];
        if grad_output.shape != expected {
            return Err(NnError::ShapeMismatch {
                layer: "conv1d backward",
                expected: format!("{expected:?}"),
                got: format!("{:?}", grad_output.shape),
            });
        }

        let weight = &self.weight.value.data;
        let item_in = input.item_len();
        let mut grad_input = Tensor::zeros(&input.shape);

        let partials: Vec<(Vec<T>, Vec<T>)> = grad_input
            .data
            .par_chunks_mut(CHUNK * item_in)
            .enumerate()
            .map(|(chunk_idx, gin_chunk)| {
                let mut dw = vec![T::ZERO; self.out_ch * k];
                let mut db = vec![T::ZERO; self.out_ch];
                let mut cols = vec![T::ZERO; k * t];
                let mut dcols = vec![T::ZERO; k * t];
                for (s, gin_item) in gin_chunk.chunks_mut(item_in).enumerate() {
                    let sample = chunk_idx * CHUNK + s;
                    let item = &input.data[sample * item_in..(sample + 1) * item_in];
                    let gout = grad_output.item(sample);
                    im2col_1d(item, self.in_ch, t, self.k, &mut cols);
                    unsafe {
                        gemm_at_bt::<T>(self.out_ch, t, k, gout, &cols, &mut dw);
                        gemm_ta_overwrite::<T>(k, self.out_ch, t, weight, gout, &mut dcols);
                    }
                    for oc in 0..self.out_ch {
                        let mut acc = T::ZERO;
                        for &g in &gout[oc * t..(oc + 1) * t] {
                            acc += g;
                        }
                        db[oc] += acc;
                    }
                    col2im_1d(&dcols, self.in_ch, t, self.k, gin_item);
                }
                (dw, db)
            })
            .collect();

        let dw = &mut self.weight.grad.data;
        let db = &mut self.bias.grad.data;
        dw.iter_mut().for_each(|v| *v = T::ZERO);
        db.iter_mut().for_each(|v| *v = T::ZERO);
        for (pw, pb) in &partials {
            for (d, p) in dw.iter_mut().zip(pw) {
                *d += *p;
            }
            for (d, p) in db.iter_mut().zip(pb) {
                *d += *p;
            }
        }
        Ok(grad_input)
    }

    fn descriptor(&self) -> LayerDesc {
        LayerDesc::Conv1d { in_ch: self.in_ch, out_ch: self.out_ch, k: self.k }
    }

    fn params(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}
