//! Adam optimizer state and update rule.

use crate::layers::ParamStore;

use super::TrainConfig;

/// First/second moment buffers shaped like the parameters, plus the step
/// counter used for bias correction.
pub struct AdamState {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        AdamState {
            first: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. `grads` is ordered like the store.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let correction1 = 1.0 - cfg.beta1.powi(t);
        let correction2 = 1.0 - cfg.beta2.powi(t);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (k, &g) in grad.iter().enumerate() {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[k] / correction1;
                let v_hat = v[k] / correction2;
                param.value.data_mut()[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
}
