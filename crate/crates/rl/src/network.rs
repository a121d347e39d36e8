//! The Q-network: a permutation-invariant encoder over posterior tuples, a
//! row-wise encoder over predictive summaries, and a classifier head with one
//! output per item.

use deepcat_core::posterior::PSI_COLUMNS;
use deepcat_core::{derive_seed, seeded_rng};
use ndarray::{concatenate, s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RlError};
use crate::nn::{Linear, Mlp, MlpTrace};
use crate::state::StateSnapshot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n_factors: usize,
    pub n_items: usize,
    /// Width of the tuple encoder layers.
    pub l1: usize,
    /// Output width of the item-vector encoder.
    pub l2: usize,
    /// Hidden width of the row-wise encoder.
    pub row_hidden: usize,
    /// Output width of the merge layer feeding the classifier.
    pub merge_width: usize,
    pub phi1_layers: usize,
    pub phi2_layers: usize,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn new(n_factors: usize, n_items: usize) -> Self {
        Self {
            n_factors,
            n_items,
            l1: 256,
            l2: 256,
            row_hidden: 256,
            merge_width: 256,
            phi1_layers: 3,
            phi2_layers: 3,
            seed: 0,
        }
    }

    /// Same shape with every hidden width set to `w`.
    pub fn with_width(mut self, w: usize) -> Self {
        self.l1 = w;
        self.l2 = w;
        self.row_hidden = w;
        self.merge_width = w;
        self
    }

    pub fn tuple_width(&self) -> usize {
        self.n_factors + 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(RlError::InvalidConfig(m.to_string()));
        if self.n_factors == 0 || self.n_items == 0 {
            return bad("K and J must be positive");
        }
        if self.l1 == 0 || self.l2 == 0 || self.row_hidden == 0 || self.merge_width == 0 {
            return bad("layer widths must be positive");
        }
        if self.phi1_layers == 0 || self.phi2_layers == 0 {
            return bad("encoders need at least one layer");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub config: NetworkConfig,
    pub phi1: Mlp,
    pub rowwise: Mlp,
    pub phi2: Mlp,
    pub combiner: Mlp,
    pub rho: Mlp,
}

/// Gradients laid out like [`QNetwork::layers`].
pub type Gradients = Vec<Linear>;

struct Trace {
    segments: Vec<usize>,
    phi1: MlpTrace,
    rowwise: MlpTrace,
    phi2: MlpTrace,
    combiner: MlpTrace,
    rho: MlpTrace,
}

/// One regression example: Q(state, action) is pulled toward `target`.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub state: &'a StateSnapshot,
    pub action: usize,
    pub target: f64,
}

impl QNetwork {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = seeded_rng(derive_seed(c.seed, 0x9e7));
        let phi1_sizes: Vec<usize> = std::iter::once(c.tuple_width())
            .chain(std::iter::repeat_n(c.l1, c.phi1_layers))
            .collect();
        let phi1 = Mlp::new(&phi1_sizes, true, &mut rng);
        let rowwise = Mlp::new(&[PSI_COLUMNS, c.row_hidden, c.row_hidden, 1], false, &mut rng);
        let phi2_sizes: Vec<usize> = std::iter::once(c.n_items)
            .chain(std::iter::repeat_n(c.l2, c.phi2_layers))
            .collect();
        let phi2 = Mlp::new(&phi2_sizes, false, &mut rng);
        let combiner = Mlp::new(&[c.l1 + c.l2, c.merge_width], true, &mut rng);
        let rho = Mlp::new(&[c.merge_width, c.n_items, c.n_items], false, &mut rng);
        Ok(Self {
            config,
            phi1,
            rowwise,
            phi2,
            combiner,
            rho,
        })
    }

    fn blocks(&self) -> [(&'static str, &Mlp); 5] {
        [
            ("phi1", &self.phi1),
            ("rowwise", &self.rowwise),
            ("phi2", &self.phi2),
            ("combiner", &self.combiner),
            ("rho", &self.rho),
        ]
    }

    /// Every linear layer in canonical order.
    pub fn layers(&self) -> Vec<&Linear> {
        self.blocks().into_iter().flat_map(|(_, m)| m.layers.iter()).collect()
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Linear> {
        [
            &mut self.phi1,
            &mut self.rowwise,
            &mut self.phi2,
            &mut self.combiner,
            &mut self.rho,
        ]
        .into_iter()
        .flat_map(|m| m.layers.iter_mut())
        .collect()
    }

    /// Names matching [`QNetwork::layers`], e.g. `phi1.0`.
    pub fn layer_names(&self) -> Vec<String> {
        self.blocks()
            .into_iter()
            .flat_map(|(name, m)| (0..m.layers.len()).map(move |i| format!("{name}.{i}")))
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers().iter().map(|l| l.n_params()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers().iter().all(|l| l.is_finite())
    }

    pub fn zero_grads(&self) -> Gradients {
        self.layers()
            .iter()
            .map(|l| Linear::zeros(l.n_in(), l.n_out()))
            .collect()
    }

    fn check_state(&self, s: &StateSnapshot) -> Result<()> {
        let c = &self.config;
        if s.tuples.ncols() != c.tuple_width() && s.tuples.nrows() > 0 {
            return Err(RlError::Shape(format!(
                "tuple width {} but network expects {}",
                s.tuples.ncols(),
                c.tuple_width()
            )));
        }
        if s.psi.dim() != (c.n_items, PSI_COLUMNS) || s.available.len() != c.n_items {
            return Err(RlError::Shape(format!(
                "state has {} items but network expects {}",
                s.psi.nrows(),
                c.n_items
            )));
        }
        Ok(())
    }

    fn run(&self, states: &[&StateSnapshot]) -> Result<Trace> {
        let c = &self.config;
        let b = states.len();
        for s in states {
            self.check_state(s)?;
        }
        let segments: Vec<usize> = states.iter().map(|s| s.n_steps()).collect();
        let total: usize = segments.iter().sum();
        let mut tuples = Array2::zeros((total, c.tuple_width()));
        let mut at = 0;
        for s in states {
            let t = s.n_steps();
            if t > 0 {
                tuples.slice_mut(s![at..at + t, ..]).assign(&s.tuples);
            }
            at += t;
        }
        let phi1 = self.phi1.forward_trace(tuples);
        let mut g1 = Array2::zeros((b, c.l1));
        let mut at = 0;
        for (i, &t) in segments.iter().enumerate() {
            let mut acc = g1.row_mut(i);
            for h in at..at + t {
                acc += &phi1.output().row(h);
            }
            at += t;
        }

        let mut psi = Array2::zeros((b * c.n_items, PSI_COLUMNS));
        for (i, s) in states.iter().enumerate() {
            psi.slice_mut(s![i * c.n_items..(i + 1) * c.n_items, ..]).assign(&s.psi);
        }
        let rowwise = self.rowwise.forward_trace(psi);
        let z = rowwise
            .output()
            .to_shape((b, c.n_items))
            .map_err(|e| RlError::Shape(e.to_string()))?
            .to_owned();
        let phi2 = self.phi2.forward_trace(z);
        let merged = concatenate![Axis(1), g1, *phi2.output()];
        let combiner = self.combiner.forward_trace(merged);
        let rho = self.rho.forward_trace(combiner.output().clone());
        if rho.output().iter().any(|v| !v.is_finite()) {
            return Err(RlError::NonFinite("network activations".into()));
        }
        Ok(Trace {
            segments,
            phi1,
            rowwise,
            phi2,
            combiner,
            rho,
        })
    }

    /// Raw action values for a batch of states, shape `(batch, J)`.
    pub fn forward_batch(&self, states: &[&StateSnapshot]) -> Result<Array2<f64>> {
        if states.is_empty() {
            return Ok(Array2::zeros((0, self.config.n_items)));
        }
        Ok(self.run(states)?.rho.output().clone())
    }

    /// Raw action values for one state (unmasked).
    pub fn forward(&self, state: &StateSnapshot) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&[state])?.row(0).to_vec())
    }

    /// Action values with unavailable items set to −∞.
    pub fn masked_values(&self, state: &StateSnapshot) -> Result<Vec<f64>> {
        let mut q = self.forward(state)?;
        for (v, &ok) in q.iter_mut().zip(&state.available) {
            if !ok {
                *v = f64::NEG_INFINITY;
            }
        }
        Ok(q)
    }

    /// Greedy item: masked argmax, lowest index on ties.
    pub fn act(&self, state: &StateSnapshot) -> Result<usize> {
        let q = self.masked_values(state)?;
        masked_argmax(&q, &state.available).ok_or(RlError::NoAvailableItems)
    }

    /// Mean squared TD loss (1/|batch|)·Σ(Q(s,a) − y)² and its exact gradient.
    pub fn loss_and_gradients(&self, batch: &[Example<'_>]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(RlError::EmptyBatch);
        }
        let states: Vec<&StateSnapshot> = batch.iter().map(|e| e.state).collect();
        let tr = self.run(&states)?;
        let q = tr.rho.output();
        let n = batch.len() as f64;
        let mut dq = Array2::zeros(q.raw_dim());
        let mut loss = 0.0;
        for (i, e) in batch.iter().enumerate() {
            if e.action >= self.config.n_items {
                return Err(RlError::Shape(format!("action {} out of range", e.action)));
            }
            let r = q[(i, e.action)] - e.target;
            loss += r * r;
            dq[(i, e.action)] = 2.0 * r / n;
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(RlError::NonFinite("loss".into()));
        }
        Ok((loss, self.backward(&tr, dq)))
    }

    fn backward(&self, tr: &Trace, dq: Array2<f64>) -> Gradients {
        let c = &self.config;
        let b = tr.segments.len();
        let mut grads = self.zero_grads();
        let n1 = self.phi1.layers.len();
        let nr = self.rowwise.layers.len();
        let n2 = self.phi2.layers.len();
        let nc = self.combiner.layers.len();
        let (g_phi1, rest) = grads.split_at_mut(n1);
        let (g_row, rest) = rest.split_at_mut(nr);
        let (g_phi2, rest) = rest.split_at_mut(n2);
        let (g_comb, g_rho) = rest.split_at_mut(nc);

        let d_comb = self.rho.backward(&tr.rho, dq, g_rho);
        let d_merged = self.combiner.backward(&tr.combiner, d_comb, g_comb);
        let d_g1 = d_merged.slice(s![.., ..c.l1]).to_owned();
        let d_p2 = d_merged.slice(s![.., c.l1..]).to_owned();
        let d_z = self.phi2.backward(&tr.phi2, d_p2, g_phi2);
        let d_rows = d_z
            .to_shape((b * c.n_items, 1))
            .expect("(batch, J) gradient reshapes to one column")
            .to_owned();
        self.rowwise.backward(&tr.rowwise, d_rows, g_row);

        let total: usize = tr.segments.iter().sum();
        if total > 0 {
            let mut d_t = Array2::zeros((total, c.l1));
            let mut at = 0;
            for (i, &t) in tr.segments.iter().enumerate() {
                for h in at..at + t {
                    d_t.row_mut(h).assign(&d_g1.row(i));
                }
                at += t;
            }
            self.phi1.backward(&tr.phi1, d_t, g_phi1);
        }
        grads
    }
}

/// Index of the largest value among available entries, lowest index on ties.
pub fn masked_argmax(values: &[f64], available: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, (&v, &ok)) in values.iter().zip(available).enumerate() {
        if !ok || v.is_nan() {
            continue;
        }
        match best {
            Some(b) if values[b] >= v => {}
            _ => best = Some(j),
        }
    }
    best.or_else(|| available.iter().position(|&a| a))
}
