//! Optimizer, learning-rate schedule, and EMA shadow weights.

use std::collections::BTreeMap;

use crate::autograd::NdArray;

/// Adam with decoupled weight decay. Decay applies only to weight matrices
/// (names ending in `.w`), never to biases, norm parameters, or queries.
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update over the parameters named in `grads`.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, NdArray>,
        grads: &BTreeMap<String, NdArray>,
        lr: f64,
    ) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, g) in grads {
            let p = match params.get_mut(name) {
                Some(p) => p,
                None => continue,
            };
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let decay = if name.ends_with(".w") {
                self.weight_decay
            } else {
                0.0
            };
            for ((theta, &gi), (mi, vi)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *theta -= lr * (mhat / (vhat.sqrt() + self.eps) + decay * *theta);
            }
        }
    }
}

/// Cosine decay with linear warmup, in units of optimizer steps.
pub fn lr_at(base_lr: f64, step: u64, warmup_steps: u64, total_steps: u64) -> f64 {
    if warmup_steps > 0 && step < warmup_steps {
        return base_lr * (step + 1) as f64 / warmup_steps as f64;
    }
    let total = total_steps.max(warmup_steps + 1);
    let progress = (step - warmup_steps) as f64 / (total - warmup_steps) as f64;
    let progress = progress.clamp(0.0, 1.0);
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Exponential moving average of the full parameter set.
pub struct Ema {
    pub decay: f64,
    shadow: BTreeMap<String, NdArray>,
}

impl Ema {
    pub fn new(decay: f64, params: &BTreeMap<String, NdArray>) -> Self {
        Self {
            decay,
            shadow: params.clone(),
        }
    }

    pub fn update(&mut self, params: &BTreeMap<String, NdArray>) {
        for (name, p) in params {
            let s = self.shadow.get_mut(name).expect("shadow tracks all params");
            for (si, &pi) in s.data_mut().iter_mut().zip(p.data()) {
                *si = self.decay * *si + (1.0 - self.decay) * pi;
            }
        }
    }

    pub fn weights(&self) -> &BTreeMap<String, NdArray> {
        &self.shadow
    }

    pub fn into_weights(self) -> BTreeMap<String, NdArray> {
        self.shadow
    }
}
