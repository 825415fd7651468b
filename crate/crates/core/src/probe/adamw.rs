use super::mlp::MlpParams;

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One AdamW update on a flat parameter block. `step` is the 1-based count
/// after this update.
///
/// Decay is applied to the parameters directly before the moment update, so
/// it never enters `m` or `v`.
pub fn adamw_update(cfg: &AdamWConfig, step: u64, params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64]) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
    for i in 0..params.len() {
        let g = grads[i];
        params[i] *= decay;
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// First and second moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: MlpParams,
    pub v: MlpParams,
    pub step: u64,
}

impl AdamWState {
    pub fn new(like: &MlpParams) -> Self {
        AdamWState {
            m: MlpParams::zeros(like.input_dim(), like.hidden_dim()),
            v: MlpParams::zeros(like.input_dim(), like.hidden_dim()),
            step: 0,
        }
    }

    pub fn step(&mut self, cfg: &AdamWConfig, params: &mut MlpParams, grads: &MlpParams) {
        self.step += 1;
        let g = grads.tensors();
        let p = params.tensors_mut();
        let m = self.m.tensors_mut();
        let v = self.v.tensors_mut();
        for (((p, g), m), v) in p.into_iter().zip(g).zip(m).zip(v) {
            adamw_update(cfg, self.step, p, g, m, v);
        }
    }
}
