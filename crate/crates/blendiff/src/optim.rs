//! Decoupled-weight-decay adaptive-moment optimizer and an exponential
//! moving average of parameters.

use crate::nn::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Steps of linear learning-rate warmup from 0 to `lr`.
    pub warmup_steps: usize,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
            warmup_steps: 0,
        }
    }
}

pub struct AdamW {
    cfg: AdamWConfig,
    step: usize,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, params: &ParamSet) -> Self {
        let m = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
            .collect();
        let v = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
            .collect();
        AdamW {
            cfg,
            step: 0,
            m,
            v,
        }
    }

    pub fn current_lr(&self) -> f64 {
        if self.cfg.warmup_steps > 0 && self.step < self.cfg.warmup_steps {
            self.cfg.lr * (self.step + 1) as f64 / self.cfg.warmup_steps as f64
        } else {
            self.cfg.lr
        }
    }

    /// One update; `grads` must align with the parameter order.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) {
        assert_eq!(grads.len(), params.len(), "gradient count mismatch");
        let lr = self.current_lr();
        self.step += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for (i, (_, p)) in params.iter_mut().enumerate() {
            let g = &grads[i];
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let pd = p.data_mut();
            for j in 0..pd.len() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                pd[j] -= lr * (mhat / (vhat.sqrt() + self.cfg.eps)
                    + self.cfg.weight_decay * pd[j]);
            }
        }
    }
}

/// Shadow parameters updated as
/// `shadow = decay * shadow + (1 - decay) * params`.
pub struct EmaTracker {
    decay: f64,
    shadow: ParamSet,
}

impl EmaTracker {
    pub fn new(decay: f64, params: &ParamSet) -> Self {
        EmaTracker {
            decay,
            shadow: params.clone(),
        }
    }

    pub fn update(&mut self, params: &ParamSet) {
        let d = self.decay;
        for ((_, s), (_, p)) in self.shadow.iter_mut().zip(params.iter()) {
            for (sv, pv) in s.data_mut().iter_mut().zip(p.data()) {
                *sv = d * *sv + (1.0 - d) * pv;
            }
        }
    }

    pub fn shadow(&self) -> &ParamSet {
        &self.shadow
    }
}
