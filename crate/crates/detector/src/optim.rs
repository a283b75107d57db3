//! Adam with bias correction, per-parameter step counts.

use crate::model::{Grads, Model, ParamGroup};

pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    steps: Vec<u32>,
}

impl Adam {
    pub fn new(model: &Model) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: model.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            v: model.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            steps: vec![0; model.params.len()],
        }
    }

    /// Updates every parameter whose group is trainable.
    pub fn step(&mut self, model: &mut Model, grads: &Grads, lr: f64, trainable: &dyn Fn(ParamGroup) -> bool) {
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        for (i, p) in model.params.iter_mut().enumerate() {
            if !trainable(p.group) {
                continue;
            }
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let step = (lr * c2.sqrt() / c1) as f32;
            let eps = (self.eps * c2.sqrt()) as f32;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, g), m), v) in p.data.iter_mut().zip(&grads.0[i]).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= step * *m / (v.sqrt() + eps);
            }
        }
    }
}
