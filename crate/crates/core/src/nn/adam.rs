//! Adam with bias correction (β1 = 0.9, β2 = 0.999, ε = 1e-8).

use super::tensor::{Real, Tensor};
use super::Param;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A non-finite gradient was found; parameters untouched, step counter
    /// not advanced.
    SkippedNonFinite { param: usize },
}

/// Optimizer state: step counter plus first/second moment accumulators, one
/// pair per parameter tensor.
pub struct Adam<T: Real> {
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &[&Param<T>]) -> Self {
        Adam {
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.iter().map(|p| p.value.zeros_like()).collect(),
            v: params.iter().map(|p| p.value.zeros_like()).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Reset the moments and step counter (used between training phases).
    pub fn reset(&mut self) {
        self.step = 0;
        for t in self.m.iter_mut().chain(self.v.iter_mut()) {
            t.fill(T::ZERO);
        }
    }

    /// One bias-corrected update over every parameter's current gradient.
    pub fn step(&mut self, params: &mut [&mut Param<T>], lr: f64) -> StepOutcome {
        assert_eq!(params.len(), self.m.len(), "parameter list changed size");
        for (i, p) in params.iter().enumerate() {
            if !p.grad.all_finite() {
                return StepOutcome::SkippedNonFinite { param: i };
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bias1 = 1.0 - self.beta1.powf(t);
        let bias2 = 1.0 - self.beta2.powf(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (ob1, ob2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let lr_t = T::of(lr / bias1);
        let inv_sqrt_bias2 = T::of(1.0 / bias2.sqrt());
        let eps = T::of(self.eps);

        for (i, p) in params.iter_mut().enumerate() {
            let m = &mut self.m[i].data;
            let v = &mut self.v[i].data;
            for ((w, &g), (mi, vi)) in p
                .value
                .data
                .iter_mut()
                .zip(&p.grad.data)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = b1 * *mi + ob1 * g;
                *vi = b2 * *vi + ob2 * g * g;
                let denom = (*vi).sqrt() * inv_sqrt_bias2 + eps;
                *w -= lr_t * *mi / denom;
            }
        }
        StepOutcome::Applied
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(value: f64) -> Param<f64> {
        Param::new(Tensor::from_vec(&[1], vec![value]))
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = scalar_param(1.5);
        let mut adam = Adam::new(&[&p]);
        p.grad.data[0] = 0.0;
        let out = adam.step(&mut [&mut p], 0.1);
        assert_eq!(out, StepOutcome::Applied);
        assert_eq!(p.value.data[0], 1.5);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_follows_the_closed_form() {
        // First step: m̂ = g, v̂ = g², so Δw = −lr·g/(|g| + ε),
        // which is ≈ −lr·sign(g).
        for &g in &[0.7f64, -3.0, 1e-4] {
            let mut p = scalar_param(0.0);
            let mut adam = Adam::new(&[&p]);
            p.grad.data[0] = g;
            adam.step(&mut [&mut p], 0.01);
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!(
                (p.value.data[0] - expected).abs() < 1e-12,
                "g={g}: got {}, closed form {expected}",
                p.value.data[0]
            );
            assert!((p.value.data[0] + 0.01 * g.signum()).abs() < 1e-3);
        }
    }

    #[test]
    fn two_hundred_steps_shrink_a_quadratic() {
        // minimize f(w) = w² from w = 1 with lr = 0.1
        let mut p = scalar_param(1.0);
        let mut adam = Adam::new(&[&p]);
        for _ in 0..200 {
            p.grad.data[0] = 2.0 * p.value.data[0];
            adam.step(&mut [&mut p], 0.1);
        }
        assert!(p.value.data[0].abs() < 0.1, "w after 200 steps: {}", p.value.data[0]);
    }

    #[test]
    fn non_finite_gradient_skips_the_step() {
        let mut p = scalar_param(2.0);
        let mut adam = Adam::new(&[&p]);
        p.grad.data[0] = f64::NAN;
        let out = adam.step(&mut [&mut p], 0.1);
        assert_eq!(out, StepOutcome::SkippedNonFinite { param: 0 });
        assert_eq!(p.value.data[0], 2.0);
        assert_eq!(adam.step_count(), 0);
    }
}
