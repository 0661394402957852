//! Adam optimizer with bias correction, tracking one moment pair per
//! parameter tensor.

use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
struct Moments<T: Real> {
    m: Vec<T>,
    v: Vec<T>,
}

/// Optimizer state over an ordered list of parameter tensors. The slot
/// layout is fixed at construction; `step_count` increments by exactly one
/// per [`Adam::update`].
#[derive(Debug, Clone)]
pub struct Adam<T: Real> {
    hyper: AdamHyper,
    step_count: u64,
    slots: Vec<Moments<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(hyper: AdamHyper, param_sizes: &[usize]) -> Self {
        let slots = param_sizes
            .iter()
            .map(|&n| Moments { m: vec![T::ZERO; n], v: vec![T::ZERO; n] })
            .collect();
        Adam { hyper, step_count: 0, slots }
    }

    pub fn for_params(hyper: AdamHyper, params: &[&Tensor<T>]) -> Self {
        Self::new(hyper, &params.iter().map(|p| p.numel()).collect::<Vec<_>>())
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn hyper(&self) -> AdamHyper {
        self.hyper
    }

    /// One Adam update over all slots. `grads[i]` must match the shape of
    /// `params[i]`; a zero gradient with fresh state leaves the parameter
    /// unchanged.
    pub fn update(&mut self, params: &mut [&mut Tensor<T>], grads: &[&[T]]) {
        assert_eq!(params.len(), self.slots.len(), "adam_update: wrong number of parameter tensors");
        assert_eq!(grads.len(), self.slots.len(), "adam_update: wrong number of gradients");
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.hyper.beta1.powi(t);
        let bias2 = 1.0 - self.hyper.beta2.powi(t);
        let b1 = T::from_f64(self.hyper.beta1);
        let b2 = T::from_f64(self.hyper.beta2);
        let one_minus_b1 = T::from_f64(1.0 - self.hyper.beta1);
        let one_minus_b2 = T::from_f64(1.0 - self.hyper.beta2);
        let lr = T::from_f64(self.hyper.lr);
        let eps = T::from_f64(self.hyper.eps);
        let inv_bias1 = T::from_f64(1.0 / bias1);
        let inv_bias2 = T::from_f64(1.0 / bias2);

        for ((param, grad), slot) in params.iter_mut().zip(grads).zip(&mut self.slots) {
            assert_eq!(
                param.numel(),
                grad.len(),
                "adam_update: gradient length {} does not match parameter shape {:?}",
                grad.len(),
                param.shape()
            );
            assert_eq!(slot.m.len(), param.numel(), "adam_update: slot/parameter mismatch");
            for (i, w) in param.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                slot.m[i] = b1 * slot.m[i] + one_minus_b1 * g;
                slot.v[i] = b2 * slot.v[i] + one_minus_b2 * g * g;
                let m_hat = slot.m[i] * inv_bias1;
                let v_hat = slot.v[i] * inv_bias2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Tensor::new(vec![3], vec![1.0f64, -2.0, 0.5]);
        let before = p.data().to_vec();
        let mut adam = Adam::for_params(AdamHyper::with_lr(1e-4), &[&p]);
        adam.update(&mut [&mut p], &[&[0.0, 0.0, 0.0]]);
        assert_eq!(p.data(), before.as_slice());
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_is_approximately_lr() {
        // Bias-corrected first step with g = 1: lr * g / (sqrt(g^2) + eps)
        let mut p = Tensor::new(vec![1], vec![1.0f64]);
        let mut adam = Adam::for_params(AdamHyper::with_lr(1e-4), &[&p]);
        adam.update(&mut [&mut p], &[&[1.0]]);
        let moved = 1.0 - p.data()[0];
        assert!((moved - 1e-4).abs() < 1e-8, "moved {moved}");
    }

    #[test]
    fn matches_hand_rolled_scalar_oracle() {
        // 10 steps minimizing f(w) = w^2 from w0 = 1 with lr 0.1.
        let (lr, b1, b2, eps) = (0.1f64, 0.9, 0.999, 1e-8);
        let mut w_ref = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut history = Vec::new();
        for t in 1..=10 {
            let g = 2.0 * w_ref;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            w_ref -= lr * m_hat / (v_hat.sqrt() + eps);
            history.push(w_ref);
        }

        let mut p = Tensor::new(vec![1], vec![1.0f64]);
        let mut adam = Adam::for_params(AdamHyper::with_lr(lr), &[&p]);
        for expected in history {
            let g = 2.0 * p.data()[0];
            adam.update(&mut [&mut p], &[&[g]]);
            assert!((p.data()[0] - expected).abs() < 1e-10);
        }
    }

    #[test]
    #[should_panic(expected = "does not match parameter shape")]
    fn shape_mismatch_panics() {
        let mut p = Tensor::new(vec![2], vec![0.0f64, 0.0]);
        let mut adam = Adam::for_params(AdamHyper::with_lr(1e-4), &[&p]);
        adam.update(&mut [&mut p], &[&[1.0]]);
    }
}
