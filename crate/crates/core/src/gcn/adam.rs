use super::{GcnModel, Gradients};
use crate::linalg::Matrix;

/// Adam optimizer state with bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: [Matrix; 2],
    v: [Matrix; 2],
}

impl AdamState {
    pub fn new(model: &GcnModel, lr: f64) -> Self {
        let zeros = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: [zeros(&model.w1), zeros(&model.w2)],
            v: [zeros(&model.w1), zeros(&model.w2)],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, model: &mut GcnModel, grads: &Gradients) {
        assert_eq!(model.w1.shape(), grads.w1.shape());
        assert_eq!(model.w2.shape(), grads.w2.shape());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let params = [&mut model.w1, &mut model.w2];
        let grads = [&grads.w1, &grads.w2];
        for (k, (w, g)) in params.into_iter().zip(grads).enumerate() {
            let m = self.m[k].as_mut_slice();
            let v = self.v[k].as_mut_slice();
            for (((w, &g), m), v) in w.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
