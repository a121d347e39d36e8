use crate::network::{Gradients, QNetwork};
use crate::nn::Linear;

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(net: &QNetwork, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: net.zero_grads(),
            v: net.zero_grads(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, net: &mut QNetwork, grads: &Gradients) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let step = self.lr * c2.sqrt() / c1;
        let eps_hat = self.eps * c2.sqrt();
        for (((layer, g), m), v) in net
            .layers_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            update(
                layer.weight.iter_mut(),
                g.weight.iter(),
                m.weight.iter_mut(),
                v.weight.iter_mut(),
                b1,
                b2,
                step,
                eps_hat,
            );
            update(
                layer.bias.iter_mut(),
                g.bias.iter(),
                m.bias.iter_mut(),
                v.bias.iter_mut(),
                b1,
                b2,
                step,
                eps_hat,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update<'a>(
    w: impl Iterator<Item = &'a mut f64>,
    g: impl Iterator<Item = &'a f64>,
    m: impl Iterator<Item = &'a mut f64>,
    v: impl Iterator<Item = &'a mut f64>,
    b1: f64,
    b2: f64,
    step: f64,
    eps_hat: f64,
) {
    for (((w, &g), m), v) in w.zip(g).zip(m).zip(v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *w -= step * *m / (v.sqrt() + eps_hat);
    }
}

pub fn global_norm(grads: &[Linear]) -> f64 {
    grads
        .iter()
        .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescale so the global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Linear], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for l in grads.iter_mut() {
            l.weight.mapv_inplace(|v| v * s);
            l.bias.mapv_inplace(|v| v * s);
        }
    }
    norm
}
