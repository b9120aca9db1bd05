use crate::model::{Parameters, Tensor};

/// Adam, with decoupled weight decay when `weight_decay > 0`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Update every tensor whose name passes `trainable`; others are left
    /// untouched bit for bit. Biases are not decayed.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P, trainable: impl Fn(&str) -> bool) {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        if self.first.is_empty() {
            self.first = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, ((name, p), (_, g))) in params.iter_mut().zip(&grads).enumerate() {
            if !trainable(name) {
                continue;
            }
            let decay = if is_bias(name) { 0.0 } else { self.weight_decay };
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + self.eps) + decay * *w;
                *w -= self.learning_rate * update;
            }
        }
    }
}

fn is_bias(name: &str) -> bool {
    name.ends_with(".bias") || name.rsplit('.').next().is_some_and(|n| n.starts_with("b_"))
}

/// Rescale the selected gradients so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm<P: Parameters>(grads: &mut P, max_norm: f64, selected: impl Fn(&str) -> bool) -> f64 {
    let mut tensors: Vec<(String, &mut Tensor)> = grads.tensors_mut().into_iter().filter(|(n, _)| selected(n)).collect();
    let norm = tensors.iter().map(|(_, t)| t.sum_squares()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for (_, t) in tensors.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}
