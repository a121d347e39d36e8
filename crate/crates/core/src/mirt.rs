//! Two-parameter probit MIRT item banks.
//!
//! Item `j` is answered correctly with probability Φ(B_j'θ + D_j), where B_j
//! is the j-th row of the loading matrix and D_j the intercept.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CatError, Result};
use crate::normal;

/// Calibrated item parameters: a J×K loading matrix (row-major) and J intercepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BankDocument", into = "BankDocument")]
pub struct ItemBank {
    n_items: usize,
    n_factors: usize,
    loadings: Vec<f64>,
    intercepts: Vec<f64>,
    names: Vec<String>,
}

/// JSON interchange layout: `{"loadings": [[..]], "intercepts": [..], "names": [..]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BankDocument {
    pub loadings: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
}

impl TryFrom<BankDocument> for ItemBank {
    type Error = CatError;

    fn try_from(doc: BankDocument) -> Result<Self> {
        ItemBank::new(doc.loadings, doc.intercepts, doc.names)
    }
}

impl From<ItemBank> for BankDocument {
    fn from(bank: ItemBank) -> Self {
        BankDocument {
            loadings: (0..bank.n_items).map(|j| bank.loading_row(j).to_vec()).collect(),
            intercepts: bank.intercepts,
            names: Some(bank.names),
        }
    }
}

impl ItemBank {
    /// Build a bank, enforcing finite entries, consistent shapes and at least
    /// one nonzero loading per item.
    pub fn new(loadings: Vec<Vec<f64>>, intercepts: Vec<f64>, names: Option<Vec<String>>) -> Result<Self> {
        let bank = Self::new_lenient(loadings, intercepts, names)?;
        for j in 0..bank.n_items {
            if bank.loading_row(j).iter().all(|&b| b == 0.0) {
                return Err(CatError::InvalidBank(format!("item {j} has an all-zero loading row")));
            }
        }
        Ok(bank)
    }

    /// Like [`ItemBank::new`] but admits all-zero loading rows. Such items carry
    /// no information about θ; they are useful as degenerate probes.
    pub fn new_lenient(loadings: Vec<Vec<f64>>, intercepts: Vec<f64>, names: Option<Vec<String>>) -> Result<Self> {
        let n_items = loadings.len();
        if n_items == 0 {
            return Err(CatError::InvalidBank("bank has no items".into()));
        }
        let n_factors = loadings[0].len();
        if n_factors == 0 {
            return Err(CatError::InvalidBank("bank has no factors".into()));
        }
        if intercepts.len() != n_items {
            return Err(CatError::InvalidBank(format!(
                "{} intercepts for {} items",
                intercepts.len(),
                n_items
            )));
        }
        let mut flat = Vec::with_capacity(n_items * n_factors);
        for (j, row) in loadings.iter().enumerate() {
            if row.len() != n_factors {
                return Err(CatError::InvalidBank(format!(
                    "loading row {j} has {} entries, expected {n_factors}",
                    row.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        if flat.iter().chain(&intercepts).any(|v| !v.is_finite()) {
            return Err(CatError::InvalidBank("non-finite item parameter".into()));
        }
        let names = match names {
            Some(n) if n.len() == n_items => n,
            Some(n) => {
                return Err(CatError::InvalidBank(format!(
                    "{} names for {} items",
                    n.len(),
                    n_items
                )))
            }
            None => default_names(n_items),
        };
        Ok(Self {
            n_items,
            n_factors,
            loadings: flat,
            intercepts,
            names,
        })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_factors(&self) -> usize {
        self.n_factors
    }

    #[inline]
    pub fn loading_row(&self, item: usize) -> &[f64] {
        &self.loadings[item * self.n_factors..(item + 1) * self.n_factors]
    }

    #[inline]
    pub fn intercept(&self, item: usize) -> f64 {
        self.intercepts[item]
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, item: usize) -> &str {
        &self.names[item]
    }

    /// B_j'θ + D_j without bounds checks beyond slice indexing.
    #[inline]
    pub fn linear_predictor(&self, item: usize, theta: &[f64]) -> f64 {
        let row = self.loading_row(item);
        let mut acc = self.intercepts[item];
        for (b, t) in row.iter().zip(theta) {
            acc += b * t;
        }
        acc
    }

    /// Φ(B_j'θ + D_j).
    pub fn probit_prob(&self, item: usize, theta: &[f64]) -> Result<f64> {
        self.check_item(item)?;
        if theta.len() != self.n_factors {
            return Err(CatError::DimensionMismatch {
                expected: self.n_factors,
                got: theta.len(),
            });
        }
        Ok(normal::cdf(self.linear_predictor(item, theta)))
    }

    pub fn check_item(&self, item: usize) -> Result<()> {
        if item >= self.n_items {
            return Err(CatError::ItemOutOfBounds {
                index: item,
                len: self.n_items,
            });
        }
        Ok(())
    }

    /// Copy of the bank with item `item`'s loading row and intercept negated.
    pub fn with_negated_item(&self, item: usize) -> Result<Self> {
        self.check_item(item)?;
        let mut out = self.clone();
        let k = self.n_factors;
        for b in &mut out.loadings[item * k..(item + 1) * k] {
            *b = -*b;
        }
        out.intercepts[item] = -out.intercepts[item];
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bank serialises")
    }

    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

fn default_names(n: usize) -> Vec<String> {
    (0..n).map(|j| format!("item-{:03}", j + 1)).collect()
}

/// Latent trait vector of one examinee.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamineeProfile {
    pub theta: Vec<f64>,
}

impl ExamineeProfile {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(CatError::InvalidConfig("non-finite latent trait".into()));
        }
        Ok(Self { theta })
    }

    /// θ ~ N(0, I_K).
    pub fn draw<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        let theta = (0..k)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        Self { theta }
    }
}

/// A scored response to one item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub item: usize,
    pub value: u8,
}

impl Response {
    pub fn new(bank: &ItemBank, item: usize, value: u8) -> Result<Self> {
        bank.check_item(item)?;
        if value > 1 {
            return Err(CatError::InvalidResponse(value));
        }
        Ok(Self { item, value })
    }
}

/// Draw y ~ Bernoulli(p).
pub fn simulate_response<R: Rng + ?Sized>(rng: &mut R, p: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&p) {
        return Err(CatError::InvalidProbability(p));
    }
    Ok(response_from_uniform(rng.random::<f64>(), p))
}

/// Deterministic response given a pre-drawn uniform `u ∈ [0, 1)`.
///
/// Sharing `u` across selectors gives common random numbers: two sessions
/// that administer the same item to the same examinee see the same answer.
#[inline]
pub fn response_from_uniform(u: f64, p: f64) -> u8 {
    u8::from(u < p)
}

/// Synthetic bank generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BankGenConfig {
    pub n_items: usize,
    pub n_factors: usize,
    /// Magnitudes of nonzero loadings are equally spaced over this interval.
    pub loading_range: (f64, f64),
    pub intercept_range: (f64, f64),
    /// Maximum number of factors beyond the first an item may load on.
    pub max_extra_loadings: usize,
    pub seed: u64,
}

impl Default for BankGenConfig {
    fn default() -> Self {
        Self {
            n_items: 150,
            n_factors: 5,
            loading_range: (0.3, 3.0),
            intercept_range: (-1.5, 1.5),
            max_extra_loadings: 2,
            seed: 0,
        }
    }
}

impl BankGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_items == 0 || self.n_factors == 0 {
            return Err(CatError::InvalidConfig("bank needs J >= 1 and K >= 1".into()));
        }
        let (lo, hi) = self.loading_range;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(CatError::InvalidConfig(format!(
                "loading magnitude range ({lo}, {hi}) must be positive and non-empty"
            )));
        }
        let (ilo, ihi) = self.intercept_range;
        if !(ilo.is_finite() && ihi.is_finite() && ilo <= ihi) {
            return Err(CatError::InvalidConfig(format!(
                "intercept range ({ilo}, {ihi}) is empty"
            )));
        }
        if self.max_extra_loadings > self.n_factors - 1 {
            return Err(CatError::InvalidConfig(format!(
                "max extra loadings {} exceeds K - 1 = {}",
                self.max_extra_loadings,
                self.n_factors - 1
            )));
        }
        Ok(())
    }
}

/// Generate a sparse synthetic bank.
///
/// Each column starts as a random permutation of J equally spaced magnitudes
/// over `loading_range`. Every item keeps its factor-1 loading (positive) and
/// up to `max_extra_loadings` further factors chosen uniformly (random sign).
/// Row `i < K` may only load on factors `0..=i`, and loads on factor `i`
/// itself, giving the lower-triangular identifiability pattern.
pub fn generate_bank(cfg: &BankGenConfig) -> Result<ItemBank> {
    cfg.validate()?;
    let mut rng = crate::seeded_rng(cfg.seed);
    let (j_items, k) = (cfg.n_items, cfg.n_factors);
    let (lo, hi) = cfg.loading_range;

    let spaced: Vec<f64> = if j_items == 1 {
        vec![0.5 * (lo + hi)]
    } else {
        (0..j_items)
            .map(|i| {
                let t = i as f64 / (j_items - 1) as f64;
                lo * (1.0 - t) + hi * t
            })
            .collect()
    };
    let columns: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let mut col = spaced.clone();
            col.shuffle(&mut rng);
            col
        })
        .collect();

    let mut loadings = vec![vec![0.0; k]; j_items];
    for (j, row) in loadings.iter_mut().enumerate() {
        row[0] = columns[0][j];
        let mut support: Vec<usize> = Vec::new();
        if j < k {
            if j >= 1 && cfg.max_extra_loadings >= 1 {
                support.push(j);
                let mut pool: Vec<usize> = (1..j).collect();
                let cap = (cfg.max_extra_loadings - 1).min(pool.len());
                let n_more = rng.random_range(0..=cap);
                pool.shuffle(&mut rng);
                support.extend_from_slice(&pool[..n_more]);
            }
        } else {
            let mut pool: Vec<usize> = (1..k).collect();
            let cap = cfg.max_extra_loadings.min(pool.len());
            let n_extra = rng.random_range(0..=cap);
            pool.shuffle(&mut rng);
            support.extend_from_slice(&pool[..n_extra]);
        }
        for &c in &support {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            row[c] = sign * columns[c][j];
        }
    }
    let (ilo, ihi) = cfg.intercept_range;
    let intercepts = (0..j_items)
        .map(|_| if ilo == ihi { ilo } else { rng.random_range(ilo..ihi) })
        .collect();
    ItemBank::new(loadings, intercepts, None)
}
