//! Optimization: AdamW with decoupled weight decay, global-norm gradient
//! clipping, and the one-cycle cosine learning-rate schedule.

use std::collections::BTreeMap;

use crate::tensor::{Element, Tensor};

/// Adam with decoupled weight decay. Moment state is keyed by parameter
/// path, so parameters may be rebuilt functionally between steps.
#[derive(Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: usize,
    state: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            state: BTreeMap::new(),
        }
    }

    /// Applies one update: each parameter that accumulated a gradient is
    /// replaced by a fresh leaf holding the updated values.
    pub fn step<T: Element>(&mut self, params: &mut [(String, &mut Tensor<T>)], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, tensor) in params.iter_mut() {
            let Some(grad) = tensor.take_grad() else {
                continue;
            };
            let n = grad.len();
            let (m, v) = self
                .state
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let mut data: Vec<T> = tensor.data().to_vec();
            for i in 0..n {
                let g = grad[i].as_f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let theta = data[i].as_f64();
                let update = m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * theta;
                data[i] = T::from_f64(theta - lr * update);
            }
            **tensor = Tensor::from_vec(data, tensor.shape())
                .expect("shape unchanged")
                .requires_grad();
        }
    }
}

/// Rescales accumulated gradients so their global l2 norm is at most
/// `max_norm`; returns the pre-clip norm.
pub fn clip_global_norm<T: Element>(
    params: &mut [(String, &mut Tensor<T>)],
    max_norm: f64,
) -> f64 {
    let mut sq = 0.0;
    for (_, t) in params.iter() {
        if let Some(g) = t.grad() {
            for v in g.data() {
                sq += v.as_f64() * v.as_f64();
            }
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = T::from_f64(max_norm / norm);
        for (_, t) in params.iter_mut() {
            if let Some(g) = t.take_grad() {
                let scaled: Vec<T> = g.iter().map(|&v| v * scale).collect();
                t.accumulate_grad(&scaled);
            }
        }
    }
    norm
}

/// One-cycle schedule: linear warmup from `peak/start_div` to `peak` over
/// the warmup fraction, then cosine annealing down to `peak/final_div`.
#[derive(Clone, Copy, Debug)]
pub struct OneCycle {
    pub peak_lr: f64,
    pub total_steps: usize,
    pub warmup_frac: f64,
    pub start_div: f64,
    pub final_div: f64,
}

impl OneCycle {
    pub fn new(peak_lr: f64, total_steps: usize, warmup_frac: f64) -> Self {
        OneCycle {
            peak_lr,
            total_steps,
            warmup_frac,
            start_div: 25.0,
            final_div: 1000.0,
        }
    }

    pub fn warmup_steps(&self) -> usize {
        ((self.total_steps as f64 * self.warmup_frac).round() as usize)
            .clamp(1, self.total_steps.saturating_sub(1).max(1))
    }

    pub fn lr(&self, step: usize) -> f64 {
        let warm = self.warmup_steps();
        if step <= warm {
            let lo = self.peak_lr / self.start_div;
            lo + (self.peak_lr - lo) * step as f64 / warm as f64
        } else {
            let hi = self.total_steps.max(warm + 1);
            let progress = (step - warm) as f64 / (hi - warm) as f64;
            let progress = progress.min(1.0);
            let lo = self.peak_lr / self.final_div;
            lo + 0.5 * (self.peak_lr - lo) * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}
