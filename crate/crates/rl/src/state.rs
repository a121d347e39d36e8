use deepcat_core::posterior::{prediction_quantiles, PredictionQuantiles, PSI_COLUMNS};
use deepcat_core::{ItemBank, PosteriorSamples, SunPosterior};
use ndarray::Array2;

use crate::error::{Result, RlError};

/// Network input: the posterior tuples (C1 row, C2, c3) per administered item,
/// the J×11 predictive summaries and the availability mask.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSnapshot {
    pub tuples: Array2<f64>,
    pub psi: Array2<f64>,
    pub available: Vec<bool>,
}

impl StateSnapshot {
    pub fn new(post: &SunPosterior, psi: &PredictionQuantiles) -> Result<Self> {
        let k = post.n_factors();
        let t = post.n_steps();
        let mut tuples = Array2::zeros((t, k + 2));
        for h in 0..t {
            let mut row = tuples.row_mut(h);
            for (c, v) in post.c1_row(h).iter().enumerate() {
                row[c] = *v;
            }
            row[k] = post.c2()[h];
            row[k + 1] = post.c3()[h];
        }
        let j = psi.n_items;
        let psi_arr =
            Array2::from_shape_vec((j, PSI_COLUMNS), psi.psi.clone()).map_err(|e| RlError::Shape(e.to_string()))?;
        let mut available = vec![true; j];
        for &(item, _) in post.history() {
            if item >= j {
                return Err(RlError::Shape(format!("history item {item} outside bank of {j}")));
            }
            available[item] = false;
        }
        Ok(Self {
            tuples,
            psi: psi_arr,
            available,
        })
    }

    /// Build the state from posterior draws.
    pub fn observe(bank: &ItemBank, post: &SunPosterior, samples: &PosteriorSamples) -> Result<Self> {
        let psi = prediction_quantiles(bank, samples)?;
        Self::new(post, &psi)
    }

    pub fn n_items(&self) -> usize {
        self.available.len()
    }

    pub fn n_steps(&self) -> usize {
        self.tuples.nrows()
    }

    pub fn available_items(&self) -> Vec<usize> {
        (0..self.available.len()).filter(|&j| self.available[j]).collect()
    }
}
