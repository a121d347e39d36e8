//! Dense layers with hand-written reverse mode.
//!
//! Activations are stored row-per-example: an `Array2` of shape
//! `(batch, features)`.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `(out, in)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Glorot/Xavier uniform weights, zero bias.
    pub fn xavier<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let a = (6.0 / (n_in + n_out) as f64).sqrt();
        let weight = Array2::from_shape_fn((n_out, n_in), |_| rng.random_range(-a..a));
        Self {
            weight,
            bias: Array1::zeros(n_out),
        }
    }

    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            weight: Array2::zeros((n_out, n_in)),
            bias: Array1::zeros(n_out),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weight.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// A stack of linear layers with ReLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    /// Apply ReLU after the final layer too.
    pub relu_output: bool,
}

/// Post-activation outputs of every layer, input first.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    acts: Vec<Array2<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("trace holds the input at least")
    }
}

fn relu_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], relu_output: bool, rng: &mut R) -> Self {
        let layers = sizes.windows(2).map(|w| Linear::xavier(w[0], w[1], rng)).collect();
        Self { layers, relu_output }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().map_or(0, Linear::n_out)
    }

    fn activated(&self, i: usize) -> bool {
        i + 1 < self.layers.len() || self.relu_output
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if self.activated(i) {
                relu_inplace(&mut h);
            }
        }
        h
    }

    pub fn forward_trace(&self, x: Array2<f64>) -> MlpTrace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut h = layer.forward(acts.last().unwrap());
            if self.activated(i) {
                relu_inplace(&mut h);
            }
            acts.push(h);
        }
        MlpTrace { acts }
    }

    /// Accumulate parameter gradients into `grads` (one entry per layer) and
    /// return the gradient with respect to the input.
    pub fn backward(&self, trace: &MlpTrace, dout: Array2<f64>, grads: &mut [Linear]) -> Array2<f64> {
        let mut delta = dout;
        for i in (0..self.layers.len()).rev() {
            if self.activated(i) {
                Zip::from(&mut delta).and(&trace.acts[i + 1]).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let g = &mut grads[i];
            g.weight += &delta.t().dot(&trace.acts[i]);
            g.bias += &delta.sum_axis(Axis(0));
            delta = delta.dot(&self.layers[i].weight);
        }
        delta
    }

    pub fn zero_grads(&self) -> Vec<Linear> {
        self.layers.iter().map(|l| Linear::zeros(l.n_in(), l.n_out())).collect()
    }
}
