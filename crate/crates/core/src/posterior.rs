//! Exact unified skew-normal (SUN) posterior of the latent traits.
//!
//! Under a N(0, I_K) prior and probit responses, the posterior after T items
//! is SUN with μ = 0, Ω = I and
//!
//! ```text
//! C1 = diag(2y-1) B_{1:T}    C2 = diag(2y-1) D_{1:T}    C3 = diag(sqrt(|B_t|^2 + 1))
//! Δ = C1' C3^-1              γ = C3^-1 C2               Γ = C3^-1 (C1 C1' + I) C3^-1
//! ```
//!
//! Draws come from the additive representation θ = V0 + C1' G^-1 C3 V1 with
//! G = C1 C1' + I, V0 ~ N(0, I - C1' G^-1 C1) and V1 ~ N(0, Γ) truncated below
//! at -γ. The Cholesky factor of G is carried along and extended by one row
//! per update.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CatError, Result};
use crate::mirt::ItemBank;
use crate::normal;
use crate::tmvn::{MinimaxTilting, TmvnOptions};

/// Posterior state after a sequence of scored items.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "PosteriorSnapshot", into = "PosteriorSnapshot")]
pub struct SunPosterior {
    k: usize,
    /// T×K row-major.
    c1: Vec<f64>,
    c2: Vec<f64>,
    c3: Vec<f64>,
    history: Vec<(usize, u8)>,
    /// Packed lower-triangular Cholesky factor of C1 C1' + I, row by row.
    chol: Arc<Vec<f64>>,
}

impl PartialEq for SunPosterior {
    fn eq(&self, other: &Self) -> bool {
        self.k == other.k
            && self.c1 == other.c1
            && self.c2 == other.c2
            && self.c3 == other.c3
            && self.history == other.history
    }
}

/// JSON layout `{"K", "T", "C1", "C2", "c3", "history"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorSnapshot {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "C1")]
    pub c1: Vec<Vec<f64>>,
    #[serde(rename = "C2")]
    pub c2: Vec<f64>,
    pub c3: Vec<f64>,
    pub history: Vec<(usize, u8)>,
}

impl From<SunPosterior> for PosteriorSnapshot {
    fn from(p: SunPosterior) -> Self {
        PosteriorSnapshot {
            k: p.k,
            t: p.n_steps(),
            c1: (0..p.n_steps()).map(|t| p.c1_row(t).to_vec()).collect(),
            c2: p.c2,
            c3: p.c3,
            history: p.history,
        }
    }
}

impl TryFrom<PosteriorSnapshot> for SunPosterior {
    type Error = CatError;

    fn try_from(s: PosteriorSnapshot) -> Result<Self> {
        let t = s.t;
        if s.k == 0 {
            return Err(CatError::InvalidConfig("posterior needs K >= 1".into()));
        }
        if s.c1.len() != t || s.c2.len() != t || s.c3.len() != t || s.history.len() != t {
            return Err(CatError::DimensionMismatch {
                expected: t,
                got: s.c1.len(),
            });
        }
        let mut post = SunPosterior::prior(s.k);
        for i in 0..t {
            if s.c1[i].len() != s.k {
                return Err(CatError::DimensionMismatch {
                    expected: s.k,
                    got: s.c1[i].len(),
                });
            }
            let (item, y) = s.history[i];
            if y > 1 {
                return Err(CatError::InvalidResponse(y));
            }
            let sign = if y == 1 { 1.0 } else { -1.0 };
            let b: Vec<f64> = s.c1[i].iter().map(|v| v * sign).collect();
            post = post.update_raw(&b, s.c2[i] * sign, item, y)?;
            let expect = post.c3[i];
            if (expect - s.c3[i]).abs() > 1e-9 * expect {
                return Err(CatError::InvalidConfig(format!(
                    "c3[{i}] = {} inconsistent with C1 row (expected {expect})",
                    s.c3[i]
                )));
            }
        }
        Ok(post)
    }
}

impl SunPosterior {
    /// The N(0, I_K) prior (T = 0).
    pub fn prior(k: usize) -> Self {
        Self {
            k,
            c1: Vec::new(),
            c2: Vec::new(),
            c3: Vec::new(),
            history: Vec::new(),
            chol: Arc::new(Vec::new()),
        }
    }

    pub fn n_factors(&self) -> usize {
        self.k
    }

    /// Number of administered items T.
    pub fn n_steps(&self) -> usize {
        self.history.len()
    }

    pub fn is_prior(&self) -> bool {
        self.history.is_empty()
    }

    pub fn history(&self) -> &[(usize, u8)] {
        &self.history
    }

    pub fn c1_row(&self, t: usize) -> &[f64] {
        &self.c1[t * self.k..(t + 1) * self.k]
    }

    pub fn c2(&self) -> &[f64] {
        &self.c2
    }

    pub fn c3(&self) -> &[f64] {
        &self.c3
    }

    /// Whether `item` already appears in the history.
    pub fn administered(&self, item: usize) -> bool {
        self.history.iter().any(|&(j, _)| j == item)
    }

    /// Posterior after additionally observing `y` on `bank` item `item`.
    pub fn update_item(&self, bank: &ItemBank, item: usize, y: u8) -> Result<Self> {
        bank.check_item(item)?;
        self.update_raw(bank.loading_row(item), bank.intercept(item), item, y)
    }

    /// Posterior after observing `y` on an item with loadings `b` and intercept `d`.
    /// The item index is recorded in the history only.
    pub fn update_raw(&self, b: &[f64], d: f64, item: usize, y: u8) -> Result<Self> {
        if b.len() != self.k {
            return Err(CatError::DimensionMismatch {
                expected: self.k,
                got: b.len(),
            });
        }
        if y > 1 {
            return Err(CatError::InvalidResponse(y));
        }
        if b.iter().any(|v| !v.is_finite()) || !d.is_finite() {
            return Err(CatError::InvalidBank("non-finite item parameter".into()));
        }
        let sign = if y == 1 { 1.0 } else { -1.0 };
        let t = self.n_steps();
        let mut next = self.clone();
        let row: Vec<f64> = b.iter().map(|v| sign * v).collect();
        let norm2: f64 = b.iter().map(|v| v * v).sum();
        next.c1.extend_from_slice(&row);
        next.c2.push(sign * d);
        next.c3.push((norm2 + 1.0).sqrt());
        next.history.push((item, y));

        // extend the packed Cholesky factor of G by one row: G_new = [[G, g], [g', |b|^2 + 1]]
        let old = &self.chol;
        let mut lrow = vec![0.0; t + 1];
        for i in 0..t {
            let g_i: f64 = self.c1_row(i).iter().zip(&row).map(|(a, c)| a * c).sum();
            let li = &old[i * (i + 1) / 2..i * (i + 1) / 2 + i + 1];
            let s: f64 = li[..i].iter().zip(&lrow[..i]).map(|(a, c)| a * c).sum();
            lrow[i] = (g_i - s) / li[i];
        }
        let sq: f64 = lrow[..t].iter().map(|v| v * v).sum();
        let diag2 = norm2 + 1.0 - sq;
        if !(diag2 > 0.0) {
            return Err(CatError::Factorization(format!(
                "non-positive pivot {diag2} extending C1C1'+I"
            )));
        }
        lrow[t] = diag2.sqrt();
        let mut packed = Vec::with_capacity(old.len() + t + 1);
        packed.extend_from_slice(old);
        packed.extend_from_slice(&lrow);
        next.chol = Arc::new(packed);
        Ok(next)
    }

    /// C1 as a T×K matrix.
    pub fn c1_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_steps(), self.k, &self.c1)
    }

    /// C1 C1' + I_T.
    pub fn gram(&self) -> DMatrix<f64> {
        let c1 = self.c1_matrix();
        let t = self.n_steps();
        &c1 * c1.transpose() + DMatrix::identity(t, t)
    }

    /// The incrementally maintained Cholesky factor of C1 C1' + I.
    pub fn cached_cholesky(&self) -> DMatrix<f64> {
        let t = self.n_steps();
        let mut l = DMatrix::zeros(t, t);
        for i in 0..t {
            for j in 0..=i {
                l[(i, j)] = self.chol[i * (i + 1) / 2 + j];
            }
        }
        l
    }

    /// SUN parameters; undefined for the prior.
    pub fn sun_params(&self) -> Result<SunParams> {
        if self.is_prior() {
            return Err(CatError::PriorHasNoSunParams);
        }
        let t = self.n_steps();
        let c1 = self.c1_matrix();
        let mut delta = c1.transpose();
        for (j, s) in self.c3.iter().enumerate() {
            delta.column_mut(j).scale_mut(1.0 / s);
        }
        let gamma: Vec<f64> = self.c2.iter().zip(&self.c3).map(|(a, s)| a / s).collect();
        let g = self.gram();
        let big_gamma = DMatrix::from_fn(t, t, |i, j| g[(i, j)] / (self.c3[i] * self.c3[j]));
        Ok(SunParams {
            mu: vec![0.0; self.k],
            omega: DMatrix::identity(self.k, self.k),
            delta,
            gamma,
            big_gamma,
        })
    }

    /// Draw `m` iid samples from the posterior.
    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<PosteriorSamples> {
        self.sample_with(m, &TmvnOptions::default(), rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, m: usize, opts: &TmvnOptions, rng: &mut R) -> Result<PosteriorSamples> {
        if m == 0 {
            return Err(CatError::TooFewSamples { need: 1, got: 0 });
        }
        let k = self.k;
        if self.is_prior() {
            let draws = (0..m * k).map(|_| rng.sample(StandardNormal)).collect();
            return Ok(PosteriorSamples::new(draws, m, k, 0, false));
        }
        let t = self.n_steps();
        let l = self.cached_cholesky();
        let c1 = self.c1_matrix();
        // A = L^-1 C1, so C1' G^-1 C1 = A'A
        let a = l
            .solve_lower_triangular(&c1)
            .ok_or_else(|| CatError::Factorization("singular Cholesky factor".into()))?;
        let cov0 = DMatrix::identity(k, k) - a.transpose() * &a;
        let root0 = psd_sqrt(&cov0);
        // W = C1' G^-1 C3 = A' L^-1 C3
        let c3 = DMatrix::from_diagonal(&DVector::from_column_slice(&self.c3));
        let lc3 = l
            .solve_lower_triangular(&c3)
            .ok_or_else(|| CatError::Factorization("singular Cholesky factor".into()))?;
        let w = a.transpose() * lc3;

        let params = self.sun_params()?;
        let lower: Vec<f64> = params.gamma.iter().map(|g| -g).collect();
        let upper = vec![f64::INFINITY; t];
        let tilt = MinimaxTilting::new(&params.big_gamma, &lower, &upper)?;
        let v1 = tilt.sample(m, opts, rng)?;

        let mut draws = vec![0.0; m * k];
        let mut z = vec![0.0; k];
        for i in 0..m {
            for zj in z.iter_mut() {
                *zj = rng.sample(StandardNormal);
            }
            let v1_row = v1.row(i);
            let out = &mut draws[i * k..(i + 1) * k];
            for r in 0..k {
                let mut acc = 0.0;
                for c in 0..=r {
                    acc += root0[(r, c)] * z[c];
                }
                for (c, v) in v1_row.iter().enumerate() {
                    acc += w[(r, c)] * v;
                }
                out[r] = acc;
            }
        }
        Ok(PosteriorSamples::new(draws, m, k, t, v1.approximate))
    }
}

/// Lower-triangular square root of a symmetric PSD matrix. Falls back to an
/// eigen-decomposition (then a QR to restore triangularity) when the matrix is
/// numerically singular.
fn psd_sqrt(s: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (s + s.transpose()) * 0.5;
    if let Some(ch) = nalgebra::Cholesky::new(sym.clone()) {
        return ch.l();
    }
    let eig = nalgebra::SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&vals);
    // root root' = S; turn it lower-triangular via QR of root'
    let qr = root.transpose().qr();
    let mut l = qr.r().transpose();
    for j in 0..l.ncols() {
        if l[(j, j)] < 0.0 {
            l.column_mut(j).neg_mut();
        }
    }
    l
}

/// Parameters (μ, Ω, Δ, γ, Γ) of a unified skew-normal law.
#[derive(Debug, Clone, PartialEq)]
pub struct SunParams {
    pub mu: Vec<f64>,
    pub omega: DMatrix<f64>,
    /// K×T.
    pub delta: DMatrix<f64>,
    pub gamma: Vec<f64>,
    /// T×T.
    pub big_gamma: DMatrix<f64>,
}

impl SunParams {
    /// Density φ_K(θ - μ; Ω) Φ_T(γ + Δ'Ω̄^-1 ω^-1 (θ - μ); Γ - Δ'Ω̄^-1 Δ) / Φ_T(γ; Γ).
    ///
    /// Requires Ω to be a correlation matrix (ω = I, Ω̄ = Ω) and T ≤ 4 unless
    /// the conditional covariance is diagonal.
    pub fn density(&self, theta: &[f64]) -> Result<f64> {
        self.density_evaluator()?.eval(theta)
    }

    /// Precompute everything that does not depend on θ.
    pub fn density_evaluator(&self) -> Result<SunDensity<'_>> {
        let k = self.mu.len();
        let omega_inv = self
            .omega
            .clone()
            .try_inverse()
            .ok_or_else(|| CatError::Factorization("Omega not invertible".into()))?;
        let dt_oi = self.delta.transpose() * &omega_inv;
        let cond_cov = &self.big_gamma - &dt_oi * &self.delta;
        let norm = normal::mvn_cdf(&self.gamma, &self.big_gamma)?;
        let log_det = self.omega.determinant().ln();
        let log_phi_const = -0.5 * (k as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(SunDensity {
            params: self,
            omega_inv,
            dt_oi,
            cond_cov,
            norm,
            log_phi_const,
        })
    }
}

/// A [`SunParams`] density with its θ-independent pieces cached.
#[derive(Debug, Clone)]
pub struct SunDensity<'a> {
    params: &'a SunParams,
    omega_inv: DMatrix<f64>,
    dt_oi: DMatrix<f64>,
    cond_cov: DMatrix<f64>,
    norm: f64,
    log_phi_const: f64,
}

impl SunDensity<'_> {
    pub fn eval(&self, theta: &[f64]) -> Result<f64> {
        let p = self.params;
        let k = p.mu.len();
        if theta.len() != k {
            return Err(CatError::DimensionMismatch {
                expected: k,
                got: theta.len(),
            });
        }
        let x = DVector::from_iterator(k, theta.iter().zip(&p.mu).map(|(a, b)| a - b));
        let quad = (x.transpose() * &self.omega_inv * &x)[(0, 0)];
        let phi_k = (self.log_phi_const - 0.5 * quad).exp();
        let shifted = DVector::from_column_slice(&p.gamma) + &self.dt_oi * &x;
        let num = normal::mvn_cdf(shifted.as_slice(), &self.cond_cov)?;
        Ok(phi_k * num / self.norm)
    }
}

/// M draws of θ (row-major M×K).
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    draws: Vec<f64>,
    m: usize,
    k: usize,
    /// Number of administered items of the posterior that produced the draws.
    pub source_steps: usize,
    /// True when the truncated-normal step used the Gibbs fallback.
    pub approximate: bool,
}

impl PosteriorSamples {
    pub fn new(draws: Vec<f64>, m: usize, k: usize, source_steps: usize, approximate: bool) -> Self {
        assert_eq!(draws.len(), m * k, "sample buffer shape");
        Self {
            draws,
            m,
            k,
            source_steps,
            approximate,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let k = rows.first().map_or(0, Vec::len);
        let draws = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(draws, rows.len(), k, 0, false)
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn n_factors(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.draws[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.chunks_exact(self.k.max(1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.draws
    }

    /// Values of coordinate `c` across draws.
    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.m).map(|i| self.draws[i * self.k + c]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.k];
        for r in self.rows() {
            for (a, v) in mean.iter_mut().zip(r) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= self.m as f64);
        mean
    }

    /// Sample mean and unbiased variance per coordinate (Welford updates).
    pub fn moments(&self) -> Result<Moments> {
        if self.m < 2 {
            return Err(CatError::TooFewSamples { need: 2, got: self.m });
        }
        let mut mean = vec![0.0; self.k];
        let mut m2 = vec![0.0; self.k];
        for (n, r) in self.rows().enumerate() {
            for ((mu, s), v) in mean.iter_mut().zip(m2.iter_mut()).zip(r) {
                let delta = v - *mu;
                *mu += delta / (n + 1) as f64;
                *s += delta * (v - *mu);
            }
        }
        let var = m2.iter().map(|s| s / (self.m - 1) as f64).collect();
        Ok(Moments { mean, var })
    }

    /// Empirical quantiles of coordinate `c` (linear interpolation between order statistics).
    pub fn quantiles(&self, c: usize, probs: &[f64]) -> Vec<f64> {
        let mut col = self.column(c);
        col.sort_unstable_by(f64::total_cmp);
        probs.iter().map(|&p| quantile_sorted(&col, p)).collect()
    }
}

/// Mean and unbiased variance per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Type-7 quantile of ascending `sorted`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Monte Carlo posterior predictive P(y = 1) for an item with loadings `b`, intercept `d`.
pub fn posterior_predictive(b: &[f64], d: f64, samples: &PosteriorSamples) -> Result<f64> {
    if b.len() != samples.n_factors() {
        return Err(CatError::DimensionMismatch {
            expected: samples.n_factors(),
            got: b.len(),
        });
    }
    if samples.is_empty() {
        return Err(CatError::TooFewSamples { need: 1, got: 0 });
    }
    let total: f64 = samples
        .rows()
        .map(|th| normal::cdf(d + b.iter().zip(th).map(|(x, y)| x * y).sum::<f64>()))
        .sum();
    Ok(total / samples.len() as f64)
}

/// Φ(B_j'θ_i + D_j) for one item over all draws.
pub fn item_probabilities(bank: &ItemBank, item: usize, samples: &PosteriorSamples) -> Vec<f64> {
    samples
        .rows()
        .map(|th| normal::cdf(bank.linear_predictor(item, th)))
        .collect()
}

/// Number of summary columns per item: mean, variance and the nine deciles.
pub const PSI_COLUMNS: usize = 11;

/// Per-item predictive summaries (J×11, row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionQuantiles {
    pub n_items: usize,
    pub psi: Vec<f64>,
}

impl PredictionQuantiles {
    pub fn row(&self, item: usize) -> &[f64] {
        &self.psi[item * PSI_COLUMNS..(item + 1) * PSI_COLUMNS]
    }
}

/// Summarise {Φ(B_j'θ_i + D_j)}_i for every item of the bank.
pub fn prediction_quantiles(bank: &ItemBank, samples: &PosteriorSamples) -> Result<PredictionQuantiles> {
    if bank.n_factors() != samples.n_factors() {
        return Err(CatError::DimensionMismatch {
            expected: bank.n_factors(),
            got: samples.n_factors(),
        });
    }
    if samples.is_empty() {
        return Err(CatError::TooFewSamples { need: 1, got: 0 });
    }
    let m = samples.len();
    let mut psi = Vec::with_capacity(bank.n_items() * PSI_COLUMNS);
    let mut probs = vec![0.0; m];
    for j in 0..bank.n_items() {
        for (p, th) in probs.iter_mut().zip(samples.rows()) {
            *p = normal::cdf(bank.linear_predictor(j, th));
        }
        let mean = probs.iter().sum::<f64>() / m as f64;
        let var = if m > 1 {
            probs.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (m - 1) as f64
        } else {
            0.0
        };
        psi.push(mean);
        psi.push(var);
        probs.sort_unstable_by(f64::total_cmp);
        for dec in 1..=9 {
            psi.push(quantile_sorted(&probs, dec as f64 / 10.0));
        }
    }
    Ok(PredictionQuantiles {
        n_items: bank.n_items(),
        psi,
    })
}
