use crate::error::{NdmError, Result};

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Clears moments and the step counter, keeping hyperparameters.
    pub fn reset(&mut self) {
        self.step = 0;
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
    }

    /// One update with learning rate `self.lr * lr_scale`.
    pub fn step_scaled(&mut self, params: &mut [f64], grads: &[f64], lr_scale: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(NdmError::LengthMismatch { expected: self.m.len(), actual: params.len() });
        }
        if grads.len() != self.m.len() {
            return Err(NdmError::LengthMismatch { expected: self.m.len(), actual: grads.len() });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let lr = self.lr * lr_scale;
        for ((p, &g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.step_scaled(params, grads, 1.0)
    }
}

/// Linear interpolation of the learning rate from `start` to `end` over
/// `steps` updates, expressed as a multiplier on `start`.
#[derive(Clone, Copy, Debug)]
pub struct LinearSchedule {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

impl LinearSchedule {
    pub fn multiplier(&self, step: usize) -> f64 {
        if self.steps <= 1 || self.start == 0.0 {
            return 1.0;
        }
        let frac = (step.min(self.steps - 1)) as f64 / (self.steps - 1) as f64;
        (self.start + (self.end - self.start) * frac) / self.start
    }
}
