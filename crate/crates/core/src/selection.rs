//! Bayesian item-selection criteria.
//!
//! Every criterion is a Monte Carlo functional of one shared posterior sample
//! set: for candidate item j and draw θ_i let p_i = Φ(B_j'θ_i + D_j) and
//! c = mean(p_i), the posterior predictive probability of a correct answer.
//!
//! - KL-EAP: mean_i KL(Bern(p̂) ‖ Bern(p_i)) with p̂ evaluated at the posterior mean.
//! - Max Pos: Σ_y c^y · mean_i log(c^y / f(y | θ_i)).
//! - MI: Σ_y c^y · Σ_i q_i^y log(f(y | θ_i) / c^y), where q^y are self-normalised
//!   importance weights f(y | θ_i) that turn the current draws into draws from
//!   the one-step-ahead posterior.
//! - Max Var: mean_i (p_i - c)^2.
//!
//! When a prioritized factor subset is given, the nuisance factors are
//! integrated out of the response probability under a Gaussian approximation
//! of θ_rest | θ_prioritized fitted to the draws, so KL-EAP, Max Pos and MI
//! measure information about the prioritized factors only.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CatError, Result};
use crate::mirt::ItemBank;
use crate::normal::{self, clamp_prob};
use crate::posterior::{PosteriorSamples, SunPosterior};

/// Relative tolerance under which two scores count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Selection rule identifiers shared by the CLI, config files and the API.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    EapKl,
    MaxPos,
    Mi,
    MaxVar,
    Random,
}

impl Criterion {
    pub const ALL: [Criterion; 5] = [
        Criterion::EapKl,
        Criterion::MaxPos,
        Criterion::Mi,
        Criterion::MaxVar,
        Criterion::Random,
    ];

    /// The four information-based rules (everything except random).
    pub const HEURISTICS: [Criterion; 4] = [Criterion::EapKl, Criterion::MaxPos, Criterion::Mi, Criterion::MaxVar];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::EapKl => "eap_kl",
            Criterion::MaxPos => "max_pos",
            Criterion::Mi => "mi",
            Criterion::MaxVar => "max_var",
            Criterion::Random => "random",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = CatError;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| CatError::InvalidConfig(format!("unknown selection rule {s:?}")))
    }
}

/// Scoring knobs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreOptions {
    /// Estimate the MI inner expectation by multinomial resampling instead of
    /// self-normalised weighting.
    pub mi_resampling: bool,
}

/// Score assigned to one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionScore {
    pub item: usize,
    pub score: f64,
}

/// Inputs to one selection step.
#[derive(Debug, Clone, Copy)]
pub struct SelectionContext<'a> {
    pub bank: &'a ItemBank,
    pub post: &'a SunPosterior,
    /// Candidate items (not yet administered).
    pub available: &'a [usize],
    /// Draws from `post`.
    pub samples: &'a PosteriorSamples,
    /// Prioritized factor subset; `None` targets all factors.
    pub priority: Option<&'a [usize]>,
}

impl<'a> SelectionContext<'a> {
    pub fn new(
        bank: &'a ItemBank,
        post: &'a SunPosterior,
        available: &'a [usize],
        samples: &'a PosteriorSamples,
    ) -> Self {
        Self {
            bank,
            post,
            available,
            samples,
            priority: None,
        }
    }

    pub fn with_priority(mut self, priority: Option<&'a [usize]>) -> Self {
        self.priority = priority;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.available.is_empty() {
            return Err(CatError::NoAvailableItems);
        }
        if self.bank.n_factors() != self.post.n_factors() || self.bank.n_factors() != self.samples.n_factors() {
            return Err(CatError::DimensionMismatch {
                expected: self.bank.n_factors(),
                got: self.samples.n_factors(),
            });
        }
        for &j in self.available {
            self.bank.check_item(j)?;
            if self.post.administered(j) {
                return Err(CatError::InvalidConfig(format!(
                    "item {j} is available but already administered"
                )));
            }
        }
        Ok(())
    }
}

/// Self-normalised importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceWeights {
    pub w: Vec<f64>,
    pub q: Vec<f64>,
    /// (Σw)² / Σw², equal to M / (1 + cv²).
    pub ess: f64,
}

impl ImportanceWeights {
    /// Normalise `w`; all-zero weights yield q = 0 and ESS 0.
    pub fn new(w: Vec<f64>) -> Self {
        let total: f64 = w.iter().sum();
        let sq: f64 = w.iter().map(|v| v * v).sum();
        if !(total > 0.0) {
            let n = w.len();
            return Self {
                w,
                q: vec![0.0; n],
                ess: 0.0,
            };
        }
        let q = w.iter().map(|v| v / total).collect();
        Self {
            w,
            q,
            ess: total * total / sq,
        }
    }

    /// Weights f(y | θ_i) for answering `y` on `item`.
    pub fn for_response(bank: &ItemBank, item: usize, y: u8, samples: &PosteriorSamples) -> Self {
        let w = samples
            .rows()
            .map(|th| {
                let p = normal::cdf(bank.linear_predictor(item, th));
                if y == 1 {
                    p
                } else {
                    1.0 - p
                }
            })
            .collect();
        Self::new(w)
    }

    /// Weighted mean of the draws.
    pub fn weighted_mean(&self, samples: &PosteriorSamples) -> Vec<f64> {
        let mut out = vec![0.0; samples.n_factors()];
        for (q, th) in self.q.iter().zip(samples.rows()) {
            for (o, t) in out.iter_mut().zip(th) {
                *o += q * t;
            }
        }
        out
    }
}

/// Response-probability evaluator for one bank over one sample set, optionally
/// marginalised onto a prioritized factor subset.
struct ProbModel<'a> {
    bank: &'a ItemBank,
    samples: &'a PosteriorSamples,
    marginal: Option<Marginal>,
    theta_hat: Vec<f64>,
}

/// Gaussian conditional of the nuisance factors given the prioritized ones.
struct Marginal {
    keep: Vec<usize>,
    rest: Vec<usize>,
    mean: Vec<f64>,
    /// |rest|×|keep| regression coefficients S_rk S_kk^-1.
    coef: DMatrix<f64>,
    /// Conditional covariance of rest given keep.
    cond_cov: DMatrix<f64>,
}

impl<'a> ProbModel<'a> {
    fn new(bank: &'a ItemBank, samples: &'a PosteriorSamples, priority: Option<&[usize]>) -> Result<Self> {
        let k = bank.n_factors();
        let theta_hat = samples.mean();
        let marginal = match priority {
            None => None,
            Some(keep) => {
                if keep.is_empty() || keep.iter().any(|&c| c >= k) {
                    return Err(CatError::InvalidConfig(format!(
                        "prioritized factors {keep:?} invalid for K = {k}"
                    )));
                }
                let mut keep = keep.to_vec();
                keep.sort_unstable();
                keep.dedup();
                if keep.len() == k {
                    None
                } else {
                    Some(Marginal::fit(samples, keep, &theta_hat)?)
                }
            }
        };
        Ok(Self {
            bank,
            samples,
            marginal,
            theta_hat,
        })
    }

    /// (p_i over draws using all factors, p_i marginalised, p at θ̂ marginalised).
    fn probs(&self, item: usize) -> (Vec<f64>, Vec<f64>, f64) {
        let full: Vec<f64> = self
            .samples
            .rows()
            .map(|th| normal::cdf(self.bank.linear_predictor(item, th)))
            .collect();
        match &self.marginal {
            None => {
                let hat = normal::cdf(self.bank.linear_predictor(item, &self.theta_hat));
                (full.clone(), full, hat)
            }
            Some(m) => {
                let (b_eff, d_eff, scale) = m.effective_item(self.bank.loading_row(item), self.bank.intercept(item));
                let eval = |th: &[f64]| {
                    let z = d_eff + m.keep.iter().zip(&b_eff).map(|(&c, b)| b * th[c]).sum::<f64>();
                    normal::cdf(z / scale)
                };
                let marg = self.samples.rows().map(eval).collect();
                let hat = eval(&self.theta_hat);
                (full, marg, hat)
            }
        }
    }
}

impl Marginal {
    fn fit(samples: &PosteriorSamples, keep: Vec<usize>, mean: &[f64]) -> Result<Self> {
        let k = samples.n_factors();
        let m = samples.len();
        if m < 2 {
            return Err(CatError::TooFewSamples { need: 2, got: m });
        }
        let rest: Vec<usize> = (0..k).filter(|c| !keep.contains(c)).collect();
        let mut cov = DMatrix::<f64>::zeros(k, k);
        for th in samples.rows() {
            for a in 0..k {
                let da = th[a] - mean[a];
                for b in 0..=a {
                    cov[(a, b)] += da * (th[b] - mean[b]);
                }
            }
        }
        for a in 0..k {
            for b in 0..=a {
                let v = cov[(a, b)] / (m - 1) as f64;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        let pick =
            |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |i, j| cov[(rows[i], cols[j])]);
        let s_kk = pick(&keep, &keep);
        let s_rk = pick(&rest, &keep);
        let s_rr = pick(&rest, &rest);
        let ridge = 1e-12 * (0..keep.len()).map(|i| s_kk[(i, i)]).fold(0.0, f64::max).max(1e-300);
        let s_kk_inv = (s_kk.clone() + DMatrix::identity(keep.len(), keep.len()) * ridge)
            .try_inverse()
            .ok_or_else(|| CatError::Factorization("prioritized-factor covariance singular".into()))?;
        let coef = &s_rk * s_kk_inv;
        let cond_cov = &s_rr - &coef * s_rk.transpose();
        Ok(Self {
            keep,
            rest,
            mean: mean.to_vec(),
            coef,
            cond_cov,
        })
    }

    /// Loadings on the kept factors, intercept and probit scale after integrating
    /// out the rest: Φ((d + b'θ_keep) / s).
    fn effective_item(&self, b: &[f64], d: f64) -> (Vec<f64>, f64, f64) {
        let b_rest: Vec<f64> = self.rest.iter().map(|&c| b[c]).collect();
        let mut b_eff: Vec<f64> = self.keep.iter().map(|&c| b[c]).collect();
        for (i, br) in b_rest.iter().enumerate() {
            for (kk, be) in b_eff.iter_mut().enumerate() {
                *be += self.coef[(i, kk)] * br;
            }
        }
        // d + b_rest'(m_rest - coef m_keep)
        let mut d_eff = d;
        for (i, br) in b_rest.iter().enumerate() {
            let mut cm = self.mean[self.rest[i]];
            for (kk, &c) in self.keep.iter().enumerate() {
                cm -= self.coef[(i, kk)] * self.mean[c];
            }
            d_eff += br * cm;
        }
        let mut var = 1.0;
        for i in 0..b_rest.len() {
            for j in 0..b_rest.len() {
                var += b_rest[i] * self.cond_cov[(i, j)] * b_rest[j];
            }
        }
        (b_eff, d_eff, var.max(1.0).sqrt())
    }
}

/// Probability sets for one candidate, pooled over ensemble members.
#[derive(Default)]
struct PooledProbs {
    full: Vec<f64>,
    marg: Vec<f64>,
    /// p̂ per entry of `marg` (member-specific in ensembles).
    hat: Vec<f64>,
}

impl PooledProbs {
    fn push(&mut self, model: &ProbModel<'_>, item: usize) {
        let (full, marg, hat) = model.probs(item);
        self.hat.extend(std::iter::repeat_n(hat, marg.len()));
        self.full.extend(full);
        self.marg.extend(marg);
    }
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn bernoulli_kl(p: f64, q: f64) -> f64 {
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

fn score_pooled<R: Rng + ?Sized>(criterion: Criterion, probs: &PooledProbs, opts: &ScoreOptions, rng: &mut R) -> f64 {
    let score = match criterion {
        Criterion::Random => 0.0,
        Criterion::MaxVar => {
            if is_constant(&probs.full) {
                return 0.0;
            }
            let c = mean(&probs.full);
            probs.full.iter().map(|p| (p - c) * (p - c)).sum::<f64>() / probs.full.len() as f64
        }
        Criterion::EapKl => {
            if is_constant(&probs.marg) && probs.hat.iter().zip(&probs.marg).all(|(a, b)| a == b) {
                return 0.0;
            }
            probs
                .marg
                .iter()
                .zip(&probs.hat)
                .map(|(&p, &h)| bernoulli_kl(clamp_prob(h), clamp_prob(p)))
                .sum::<f64>()
                / probs.marg.len() as f64
        }
        Criterion::MaxPos => {
            if is_constant(&probs.marg) {
                return 0.0;
            }
            let p: Vec<f64> = probs.marg.iter().map(|&v| clamp_prob(v)).collect();
            let c = clamp_prob(mean(&p));
            let n = p.len() as f64;
            let e1 = p.iter().map(|pi| (c / pi).ln()).sum::<f64>() / n;
            let e0 = p.iter().map(|pi| ((1.0 - c) / (1.0 - pi)).ln()).sum::<f64>() / n;
            c * e1 + (1.0 - c) * e0
        }
        Criterion::Mi => {
            if is_constant(&probs.marg) {
                return 0.0;
            }
            let p: Vec<f64> = probs.marg.iter().map(|&v| clamp_prob(v)).collect();
            mi_from_probs(&p, opts.mi_resampling, rng)
        }
    };
    score.max(0.0)
}

/// MI via one-step-ahead importance reweighting of the current draws.
fn mi_from_probs<R: Rng + ?Sized>(p: &[f64], resample: bool, rng: &mut R) -> f64 {
    let c = clamp_prob(mean(p));
    let mut total = 0.0;
    for y in [1u8, 0u8] {
        let (cy, w): (f64, Vec<f64>) = if y == 1 {
            (c, p.to_vec())
        } else {
            (1.0 - c, p.iter().map(|v| 1.0 - v).collect())
        };
        let weights = ImportanceWeights::new(w);
        if weights.ess == 0.0 {
            continue;
        }
        let inner = if resample {
            let idx = multinomial_resample(&weights.q, p.len(), rng);
            idx.iter().map(|&i| (weights.w[i] / cy).ln()).sum::<f64>() / idx.len() as f64
        } else {
            weights
                .q
                .iter()
                .zip(&weights.w)
                .map(|(q, f)| q * (f / cy).ln())
                .sum::<f64>()
        };
        total += cy * inner;
    }
    total
}

/// Draw `n` indices with probabilities `q` (inverse CDF on sorted uniforms).
pub fn multinomial_resample<R: Rng + ?Sized>(q: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let mut u: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    u.sort_unstable_by(f64::total_cmp);
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut i = 0;
    for &ui in &u {
        while i + 1 < q.len() && cum + q[i] <= ui {
            cum += q[i];
            i += 1;
        }
        out.push(i);
    }
    out
}

/// MI written as the expected Bernoulli KL between f(y | θ_i) and the predictive,
/// evaluated on the same draws and clamping as [`score_items`].
pub fn mi_as_expected_kl(bank: &ItemBank, item: usize, samples: &PosteriorSamples) -> f64 {
    let p: Vec<f64> = samples
        .rows()
        .map(|th| clamp_prob(normal::cdf(bank.linear_predictor(item, th))))
        .collect();
    let c = clamp_prob(mean(&p));
    p.iter().map(|&pi| bernoulli_kl(pi, c)).sum::<f64>() / p.len() as f64
}

/// Score every available item under `criterion`.
pub fn score_items<R: Rng + ?Sized>(
    ctx: &SelectionContext<'_>,
    criterion: Criterion,
    opts: &ScoreOptions,
    rng: &mut R,
) -> Result<Vec<CriterionScore>> {
    ctx.validate()?;
    if ctx.samples.len() < 2 {
        return Err(CatError::TooFewSamples {
            need: 2,
            got: ctx.samples.len(),
        });
    }
    let model = ProbModel::new(ctx.bank, ctx.samples, ctx.priority)?;
    Ok(ctx
        .available
        .iter()
        .map(|&item| {
            let mut pooled = PooledProbs::default();
            pooled.push(&model, item);
            CriterionScore {
                item,
                score: score_pooled(criterion, &pooled, opts, rng),
            }
        })
        .collect())
}

/// Highest score, ties (within [`TIE_TOLERANCE`] relative) going to the lowest item index.
pub fn argmax_lowest_index(scores: &[CriterionScore]) -> Result<usize> {
    let best = scores.iter().map(|s| s.score).fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return Err(CatError::NoAvailableItems);
    }
    let cutoff = best - TIE_TOLERANCE * best.abs();
    Ok(scores
        .iter()
        .filter(|s| s.score >= cutoff)
        .map(|s| s.item)
        .min()
        .expect("non-empty"))
}

/// Uniform draw from the available items.
pub fn select_random<R: Rng + ?Sized>(available: &[usize], rng: &mut R) -> Result<usize> {
    if available.is_empty() {
        return Err(CatError::NoAvailableItems);
    }
    Ok(available[rng.random_range(0..available.len())])
}

/// Run one selection step with a fixed-parameter bank.
pub fn select<R: Rng + ?Sized>(
    ctx: &SelectionContext<'_>,
    criterion: Criterion,
    opts: &ScoreOptions,
    rng: &mut R,
) -> Result<usize> {
    if criterion == Criterion::Random {
        ctx.validate()?;
        return select_random(ctx.available, rng);
    }
    argmax_lowest_index(&score_items(ctx, criterion, opts, rng)?)
}

/// Posterior draws of item parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEnsemble {
    members: Vec<ItemBank>,
}

impl ParamEnsemble {
    pub fn new(members: Vec<ItemBank>) -> Result<Self> {
        let first = members.first().ok_or(CatError::EmptyEnsemble)?;
        let shape = (first.n_items(), first.n_factors());
        for m in &members {
            if (m.n_items(), m.n_factors()) != shape {
                return Err(CatError::InvalidBank(format!(
                    "ensemble member shape {}x{} differs from {}x{}",
                    m.n_items(),
                    m.n_factors(),
                    shape.0,
                    shape.1
                )));
            }
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[ItemBank] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn n_items(&self) -> usize {
        self.members[0].n_items()
    }

    pub fn n_factors(&self) -> usize {
        self.members[0].n_factors()
    }

    /// Per-member priors.
    pub fn priors(&self) -> Vec<SunPosterior> {
        vec![SunPosterior::prior(self.n_factors()); self.len()]
    }

    /// Update every member's posterior with the same observation.
    pub fn update(&self, posts: &[SunPosterior], item: usize, y: u8) -> Result<Vec<SunPosterior>> {
        if posts.len() != self.len() {
            return Err(CatError::DimensionMismatch {
                expected: self.len(),
                got: posts.len(),
            });
        }
        self.members
            .iter()
            .zip(posts)
            .map(|(bank, post)| post.update_item(bank, item, y))
            .collect()
    }

    /// Draw `m` samples from every member's posterior. All members use the
    /// same seed, so identical members yield identical draws.
    pub fn sample(&self, posts: &[SunPosterior], m: usize, seed: u64) -> Result<Vec<PosteriorSamples>> {
        posts
            .iter()
            .map(|post| post.sample(m, &mut crate::seeded_rng(seed)))
            .collect()
    }

    /// Equal-weight mixture mean of the member draws.
    pub fn pooled_mean(samples: &[PosteriorSamples]) -> Vec<f64> {
        let k = samples.first().map_or(0, |s| s.n_factors());
        let mut out = vec![0.0; k];
        for s in samples {
            for (o, v) in out.iter_mut().zip(s.mean()) {
                *o += v / samples.len() as f64;
            }
        }
        out
    }
}

/// Score items with criterion integrals averaged over ensemble members (each
/// member weighted 1/M_ξ through equal-size sample sets).
pub fn score_fully_bayesian<R: Rng + ?Sized>(
    ensemble: &ParamEnsemble,
    member_samples: &[PosteriorSamples],
    available: &[usize],
    criterion: Criterion,
    priority: Option<&[usize]>,
    opts: &ScoreOptions,
    rng: &mut R,
) -> Result<Vec<CriterionScore>> {
    if ensemble.is_empty() {
        return Err(CatError::EmptyEnsemble);
    }
    if member_samples.len() != ensemble.len() {
        return Err(CatError::DimensionMismatch {
            expected: ensemble.len(),
            got: member_samples.len(),
        });
    }
    if available.is_empty() {
        return Err(CatError::NoAvailableItems);
    }
    let m0 = member_samples[0].len();
    if member_samples.iter().any(|s| s.len() != m0) {
        return Err(CatError::InvalidConfig(
            "ensemble members need equal sample counts".into(),
        ));
    }
    if m0 < 2 {
        return Err(CatError::TooFewSamples { need: 2, got: m0 });
    }
    let mut models = Vec::with_capacity(ensemble.len());
    for (bank, s) in ensemble.members().iter().zip(member_samples) {
        models.push(ProbModel::new(bank, s, priority)?);
    }
    available
        .iter()
        .map(|&item| {
            ensemble.members()[0].check_item(item)?;
            let mut pooled = PooledProbs::default();
            for model in &models {
                pooled.push(model, item);
            }
            Ok(CriterionScore {
                item,
                score: score_pooled(criterion, &pooled, opts, rng),
            })
        })
        .collect()
}

/// Fully Bayesian selection step.
pub fn select_fully_bayesian<R: Rng + ?Sized>(
    ensemble: &ParamEnsemble,
    member_samples: &[PosteriorSamples],
    available: &[usize],
    criterion: Criterion,
    priority: Option<&[usize]>,
    opts: &ScoreOptions,
    rng: &mut R,
) -> Result<usize> {
    if criterion == Criterion::Random {
        return select_random(available, rng);
    }
    let scores = score_fully_bayesian(ensemble, member_samples, available, criterion, priority, opts, rng)?;
    argmax_lowest_index(&scores)
}
