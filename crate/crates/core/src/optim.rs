//! Adam with per-group state and the exponential learning-rate decay used for
//! Gaussian positions in 3DGS.

use nalgebra::DMatrix;

use crate::densify::{append_zero_rows, select_rows, RowState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-15 }
    }
}

/// First and second moments for one parameter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub steps: u64,
}

impl AdamMoments {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { m: DMatrix::zeros(rows, cols), v: DMatrix::zeros(rows, cols), steps: 0 }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.m.shape()
    }

    /// One bias-corrected Adam update of `param` in place.
    pub fn step(&mut self, param: &mut DMatrix<f64>, grad: &DMatrix<f64>, lr: f64, cfg: &AdamConfig) {
        assert_eq!(param.shape(), grad.shape());
        assert_eq!(param.shape(), self.m.shape());
        self.steps += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.steps as i32);
        for ((p, g), (m, v)) in param.iter_mut().zip(grad.iter()).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().chain(self.v.iter()).all(|v| v.is_finite())
    }
}

impl RowState for AdamMoments {
    fn append_zeroed(&mut self, count: usize) {
        append_zero_rows(&mut self.m, count);
        append_zero_rows(&mut self.v, count);
    }

    fn retain_rows(&mut self, keep: &[usize]) {
        self.m = select_rows(&self.m, keep);
        self.v = select_rows(&self.v, keep);
    }
}

/// `exp((1 − t) ln lr_init + t ln lr_final)` with `t = step / max_steps` clamped to `[0, 1]`.
pub fn exponential_lr(step: u64, lr_init: f64, lr_final: f64, max_steps: u64) -> f64 {
    if lr_init == 0.0 || lr_final == 0.0 {
        return 0.0;
    }
    let t = if max_steps == 0 { 1.0 } else { (step as f64 / max_steps as f64).clamp(0.0, 1.0) };
    ((1.0 - t) * lr_init.ln() + t * lr_final.ln()).exp()
}
