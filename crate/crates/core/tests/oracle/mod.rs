//! Deterministic quadrature oracles for low-dimensional posteriors.
//!
//! The posterior density φ_K(θ) Π_t Φ(s_t (B_t'θ + D_t)) is tabulated on a
//! tensor Simpson grid (K ≤ 2) and every expectation is a weighted sum over
//! grid nodes. Nothing here touches the sampler under test.

#![allow(dead_code)]

use deepcat_core::normal::{cdf, clamp_prob};

/// One observed item: loadings, intercept, response.
#[derive(Debug, Clone)]
pub struct Obs {
    pub b: Vec<f64>,
    pub d: f64,
    pub y: u8,
}

/// Normalised posterior weights on a tensor grid.
#[derive(Debug, Clone)]
pub struct GridPosterior {
    pub k: usize,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

fn simpson_1d(lo: f64, hi: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let n = if n % 2 == 0 { n + 1 } else { n };
    let h = (hi - lo) / (n - 1) as f64;
    let mut x = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        x.push(lo + h * i as f64);
        let c = if i == 0 || i == n - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        w.push(c * h / 3.0);
    }
    (x, w)
}

fn log_lik(theta: &[f64], obs: &[Obs]) -> f64 {
    obs.iter()
        .map(|o| {
            let eta = o.d + o.b.iter().zip(theta).map(|(b, t)| b * t).sum::<f64>();
            let s = if o.y == 1 { eta } else { -eta };
            deepcat_core::normal::ln_cdf(s)
        })
        .sum()
}

impl GridPosterior {
    /// Posterior after `obs` under a N(0, I_k) prior, k ∈ {1, 2}.
    pub fn new(k: usize, obs: &[Obs], nodes_per_dim: usize, half_width: f64) -> Self {
        assert!(k == 1 || k == 2, "grid oracle supports K <= 2");
        let (x, w) = simpson_1d(-half_width, half_width, nodes_per_dim);
        let mut points = Vec::new();
        let mut logw = Vec::new();
        if k == 1 {
            for (xi, wi) in x.iter().zip(&w) {
                let th = vec![*xi];
                logw.push(wi.ln() - 0.5 * xi * xi + log_lik(&th, obs));
                points.push(th);
            }
        } else {
            for (xi, wi) in x.iter().zip(&w) {
                for (xj, wj) in x.iter().zip(&w) {
                    let th = vec![*xi, *xj];
                    logw.push((wi * wj).ln() - 0.5 * (xi * xi + xj * xj) + log_lik(&th, obs));
                    points.push(th);
                }
            }
        }
        let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|v| *v /= total);
        Self { k, points, weights }
    }

    pub fn default_for(k: usize, obs: &[Obs]) -> Self {
        match k {
            1 => Self::new(1, obs, 4001, 10.0),
            _ => Self::new(2, obs, 401, 8.0),
        }
    }

    pub fn expect(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.k).map(|c| self.expect(|t| t[c])).collect()
    }

    pub fn var(&self) -> Vec<f64> {
        let m = self.mean();
        (0..self.k).map(|c| self.expect(|t| (t[c] - m[c]).powi(2))).collect()
    }
}

fn prob(b: &[f64], d: f64, theta: &[f64]) -> f64 {
    cdf(d + b.iter().zip(theta).map(|(x, t)| x * t).sum::<f64>())
}

fn kl(p: f64, q: f64) -> f64 {
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

/// Predictive P(y = 1) for an item.
pub fn predictive(g: &GridPosterior, b: &[f64], d: f64) -> f64 {
    g.expect(|t| prob(b, d, t))
}

/// Mutual information between the response and θ:
/// Σ_y ∫ f(θ|Y) f(y|θ) log(f(y|θ) / f(y|Y)) dθ.
pub fn mi(g: &GridPosterior, b: &[f64], d: f64) -> f64 {
    let c = clamp_prob(predictive(g, b, d));
    g.expect(|t| {
        let p = clamp_prob(prob(b, d, t));
        p * (p / c).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - c)).ln()
    })
}

/// Expected KL between the response law at the posterior mean and at θ.
pub fn eap_kl(g: &GridPosterior, b: &[f64], d: f64) -> f64 {
    let m = g.mean();
    let ph = clamp_prob(prob(b, d, &m));
    g.expect(|t| kl(ph, clamp_prob(prob(b, d, t))))
}

/// Σ_y c^y ∫ f(θ|Y) log(c^y / f(y|θ)) dθ.
pub fn max_pos(g: &GridPosterior, b: &[f64], d: f64) -> f64 {
    let c = clamp_prob(predictive(g, b, d));
    let e1 = g.expect(|t| (c / clamp_prob(prob(b, d, t))).ln());
    let e0 = g.expect(|t| ((1.0 - c) / (1.0 - clamp_prob(prob(b, d, t)))).ln());
    c * e1 + (1.0 - c) * e0
}

/// Variance of the response probability under the posterior.
pub fn max_var(g: &GridPosterior, b: &[f64], d: f64) -> f64 {
    let c = predictive(g, b, d);
    g.expect(|t| (prob(b, d, t) - c).powi(2))
}

/// Equal-weight ensemble versions: member m has posterior `gs[m]` and item
/// parameters `items[m]`.
pub fn ensemble_mi(gs: &[GridPosterior], items: &[(Vec<f64>, f64)]) -> f64 {
    let n = gs.len() as f64;
    let c = clamp_prob(
        gs.iter()
            .zip(items)
            .map(|(g, (b, d))| predictive(g, b, *d))
            .sum::<f64>()
            / n,
    );
    gs.iter()
        .zip(items)
        .map(|(g, (b, d))| {
            g.expect(|t| {
                let p = clamp_prob(prob(b, *d, t));
                p * (p / c).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - c)).ln()
            })
        })
        .sum::<f64>()
        / n
}

pub fn ensemble_max_var(gs: &[GridPosterior], items: &[(Vec<f64>, f64)]) -> f64 {
    let n = gs.len() as f64;
    let c = gs
        .iter()
        .zip(items)
        .map(|(g, (b, d))| predictive(g, b, *d))
        .sum::<f64>()
        / n;
    gs.iter()
        .zip(items)
        .map(|(g, (b, d))| g.expect(|t| (prob(b, *d, t) - c).powi(2)))
        .sum::<f64>()
        / n
}

/// Index of the largest value (first on exact ties).
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
