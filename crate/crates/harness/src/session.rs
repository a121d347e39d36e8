//! One adaptive test: sample the posterior, check termination, select, observe, update.

use std::sync::Arc;
use std::time::Instant;

use deepcat_core::mirt::response_from_uniform;
use deepcat_core::posterior::quantile_sorted;
use deepcat_core::selection::{select, select_fully_bayesian, select_random, ScoreOptions};
use deepcat_core::{
    derive_seed, normal, seeded_rng, Criterion, ItemBank, PosteriorSamples, SelectionContext, SunPosterior,
};
use deepcat_rl::StateSnapshot;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::selector::Selector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Stop once every prioritized marginal variance is at most this.
    pub tau2: f64,
    /// Prioritized factors, 0-based.
    pub priority: Vec<usize>,
    /// Maximum number of items.
    pub horizon: usize,
    /// Posterior draws per step.
    pub n_samples: usize,
    /// Heuristic criteria integrate over the prioritized factors only.
    pub priority_selection: bool,
    /// Keep administering after the variance rule fires (termination step is
    /// still recorded); used for fixed-length MSE tables.
    pub run_to_horizon: bool,
    pub score: ScoreOptions,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            tau2: 0.16,
            priority: vec![0],
            horizon: 50,
            n_samples: 2000,
            priority_selection: true,
            run_to_horizon: false,
            score: ScoreOptions::default(),
            seed: 0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self, bank: &ItemBank) -> Result<()> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if !(self.tau2 > 0.0) {
            return bad(format!("tau2 must be positive, got {}", self.tau2));
        }
        if self.horizon == 0 || self.horizon > bank.n_items() {
            return bad(format!("horizon {} must lie in 1..={}", self.horizon, bank.n_items()));
        }
        if self.priority.is_empty() || self.priority.iter().any(|&k| k >= bank.n_factors()) {
            return bad("prioritized factors must be a non-empty subset of 0..K".into());
        }
        if self.n_samples < 2 {
            return bad("need at least two posterior draws".into());
        }
        Ok(())
    }
}

/// Per-factor posterior summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub q25: Vec<f64>,
    pub median: Vec<f64>,
    pub q75: Vec<f64>,
}

impl PosteriorSummary {
    /// Exact summary of the N(0, I) prior.
    pub fn prior(k: usize) -> Self {
        let q = normal::quantile(0.75);
        Self {
            mean: vec![0.0; k],
            var: vec![1.0; k],
            q25: vec![-q; k],
            median: vec![0.0; k],
            q75: vec![q; k],
        }
    }

    /// Summary of an equal-weight mixture of sample sets.
    pub fn from_members(members: &[PosteriorSamples]) -> Result<Self> {
        let k = members[0].n_factors();
        let n = members.len() as f64;
        let moments: Vec<_> = members
            .iter()
            .map(|s| s.moments())
            .collect::<std::result::Result<_, _>>()?;
        let mean: Vec<f64> = (0..k)
            .map(|c| moments.iter().map(|m| m.mean[c]).sum::<f64>() / n)
            .collect();
        // law of total variance; exact for identical members
        let var: Vec<f64> = (0..k)
            .map(|c| {
                let within = moments.iter().map(|m| m.var[c]).sum::<f64>() / n;
                let between = moments.iter().map(|m| (m.mean[c] - mean[c]).powi(2)).sum::<f64>() / n;
                within + between
            })
            .collect();
        let mut q25 = Vec::with_capacity(k);
        let mut median = Vec::with_capacity(k);
        let mut q75 = Vec::with_capacity(k);
        for c in 0..k {
            let mut col: Vec<f64> = members.iter().flat_map(|s| s.column(c)).collect();
            col.sort_unstable_by(f64::total_cmp);
            q25.push(quantile_sorted(&col, 0.25));
            median.push(quantile_sorted(&col, 0.5));
            q75.push(quantile_sorted(&col, 0.75));
        }
        Ok(Self {
            mean,
            var,
            q25,
            median,
            q75,
        })
    }

    pub fn max_var(&self, priority: &[usize]) -> f64 {
        priority.iter().map(|&k| self.var[k]).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Posterior state of the current step.
#[derive(Debug, Clone)]
pub struct Observation {
    pub step: usize,
    pub summary: PosteriorSummary,
    pub criterion_met: bool,
    pub sample_seconds: f64,
    samples: Vec<PosteriorSamples>,
}

impl Observation {
    /// Draws behind the summary, one set per ensemble member.
    pub fn samples(&self) -> &[PosteriorSamples] {
        &self.samples
    }
}

/// Stepwise driver shared by simulations and live sessions.
///
/// All randomness is derived from `(cfg.seed, step)`, so replaying the same
/// history reproduces the same draws and the same next item.
#[derive(Debug, Clone)]
pub struct SessionEngine {
    bank: Arc<ItemBank>,
    selector: Selector,
    cfg: SessionConfig,
    posts: Vec<SunPosterior>,
    items: Vec<usize>,
    responses: Vec<u8>,
    current: Option<Observation>,
    terminated_at: Option<usize>,
}

const SELECT_STREAM: u64 = 1 << 32;

impl SessionEngine {
    pub fn new(bank: Arc<ItemBank>, selector: Selector, cfg: SessionConfig) -> Result<Self> {
        cfg.validate(&bank)?;
        match &selector {
            Selector::QLearning(net) => {
                if net.config.n_items != bank.n_items() || net.config.n_factors != bank.n_factors() {
                    return Err(HarnessError::InvalidConfig(format!(
                        "policy built for J={}, K={} but bank has J={}, K={}",
                        net.config.n_items,
                        net.config.n_factors,
                        bank.n_items(),
                        bank.n_factors()
                    )));
                }
            }
            Selector::Ensemble { ensemble, .. } => {
                if ensemble.n_items() != bank.n_items() || ensemble.n_factors() != bank.n_factors() {
                    return Err(HarnessError::InvalidConfig("ensemble shape differs from bank".into()));
                }
            }
            Selector::Heuristic(_) => {}
        }
        let k = bank.n_factors();
        let posts = vec![SunPosterior::prior(k); selector.n_members()];
        Ok(Self {
            bank,
            selector,
            cfg,
            posts,
            items: Vec::new(),
            responses: Vec::new(),
            current: None,
            terminated_at: None,
        })
    }

    /// Rebuild a session from its response history.
    pub fn replay(
        bank: Arc<ItemBank>,
        selector: Selector,
        cfg: SessionConfig,
        history: &[(usize, u8)],
    ) -> Result<Self> {
        let mut eng = Self::new(bank, selector, cfg)?;
        for &(item, y) in history {
            eng.observe()?;
            eng.record(item, y)?;
        }
        Ok(eng)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn bank(&self) -> &ItemBank {
        &self.bank
    }

    pub fn selector(&self) -> &Selector {
        &self.selector
    }

    /// Items administered so far.
    pub fn step(&self) -> usize {
        self.items.len()
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn responses(&self) -> &[u8] {
        &self.responses
    }

    pub fn history(&self) -> Vec<(usize, u8)> {
        self.items.iter().copied().zip(self.responses.iter().copied()).collect()
    }

    /// Posterior under the generating bank (first member for ensembles).
    pub fn posterior(&self) -> &SunPosterior {
        &self.posts[0]
    }

    pub fn termination_step(&self) -> Option<usize> {
        self.terminated_at
    }

    pub fn available(&self) -> Vec<usize> {
        (0..self.bank.n_items())
            .filter(|&j| !self.posts[0].administered(j))
            .collect()
    }

    /// Sample the current posterior (once per step) and evaluate the stopping rule.
    pub fn observe(&mut self) -> Result<&Observation> {
        if self.current.as_ref().is_none_or(|o| o.step != self.step()) {
            let step = self.step();
            let start = Instant::now();
            let seed = derive_seed(self.cfg.seed, step as u64);
            let samples = match &self.selector {
                Selector::Ensemble { ensemble, .. } => ensemble.sample(&self.posts, self.cfg.n_samples, seed)?,
                _ => vec![self.posts[0].sample(self.cfg.n_samples, &mut seeded_rng(seed))?],
            };
            let summary = if step == 0 {
                PosteriorSummary::prior(self.bank.n_factors())
            } else {
                PosteriorSummary::from_members(&samples)?
            };
            let criterion_met = summary.max_var(&self.cfg.priority) <= self.cfg.tau2;
            if criterion_met && self.terminated_at.is_none() {
                self.terminated_at = Some(step);
            }
            self.current = Some(Observation {
                step,
                summary,
                criterion_met,
                sample_seconds: start.elapsed().as_secs_f64(),
                samples,
            });
        }
        Ok(self.current.as_ref().expect("observation cached above"))
    }

    pub fn is_finished(&mut self) -> Result<bool> {
        self.observe()?;
        let stopped = self.terminated_at.is_some() && !self.cfg.run_to_horizon;
        Ok(stopped || self.step() >= self.cfg.horizon || self.step() >= self.bank.n_items())
    }

    /// Choose the next item from the current observation.
    pub fn next_item(&mut self) -> Result<usize> {
        if self.is_finished()? {
            return Err(HarnessError::SessionFinished);
        }
        let available = self.available();
        let obs = self.current.as_ref().expect("observed in is_finished");
        let mut rng = seeded_rng(derive_seed(self.cfg.seed, SELECT_STREAM + self.step() as u64));
        let priority = self.cfg.priority_selection.then_some(self.cfg.priority.as_slice());
        let item = match &self.selector {
            Selector::Heuristic(Criterion::Random) => select_random(&available, &mut rng)?,
            Selector::Heuristic(c) => {
                let ctx = SelectionContext::new(&self.bank, &self.posts[0], &available, &obs.samples[0])
                    .with_priority(priority);
                select(&ctx, *c, &self.cfg.score, &mut rng)?
            }
            Selector::QLearning(net) => {
                let state = StateSnapshot::observe(&self.bank, &self.posts[0], &obs.samples[0])?;
                net.act(&state)?
            }
            Selector::Ensemble { ensemble, criterion } => select_fully_bayesian(
                ensemble,
                &obs.samples,
                &available,
                *criterion,
                priority,
                &self.cfg.score,
                &mut rng,
            )?,
        };
        Ok(item)
    }

    /// Condition on the response to `item`.
    pub fn record(&mut self, item: usize, y: u8) -> Result<()> {
        if self.step() >= self.cfg.horizon {
            return Err(HarnessError::SessionFinished);
        }
        self.posts = match &self.selector {
            Selector::Ensemble { ensemble, .. } => ensemble.update(&self.posts, item, y)?,
            _ => vec![self.posts[0].update_item(&self.bank, item, y)?],
        };
        self.items.push(item);
        self.responses.push(y);
        Ok(())
    }
}

/// Source of item responses.
pub trait Responder {
    /// Response to `item`, or an abort reason.
    fn respond(&mut self, item: usize) -> std::result::Result<u8, String>;

    /// True latent trait, when known.
    fn theta(&self) -> Option<&[f64]> {
        None
    }
}

/// Simulated examinee with pre-drawn uniforms, one per item, so that every
/// selector sees the same response whenever it administers the same item.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedExaminee {
    pub theta: Vec<f64>,
    responses: Vec<u8>,
}

impl SimulatedExaminee {
    pub fn new(bank: &ItemBank, theta: Vec<f64>, uniforms: &[f64]) -> Self {
        let responses = (0..bank.n_items())
            .map(|j| response_from_uniform(uniforms[j], normal::cdf(bank.linear_predictor(j, &theta))))
            .collect();
        Self { theta, responses }
    }

    /// θ ~ N(0, I_K) and uniforms from one seed.
    pub fn draw(bank: &ItemBank, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let theta: Vec<f64> = (0..bank.n_factors()).map(|_| rng.sample(StandardNormal)).collect();
        let uniforms: Vec<f64> = (0..bank.n_items()).map(|_| rng.random()).collect();
        Self::new(bank, theta, &uniforms)
    }

    pub fn response(&self, item: usize) -> u8 {
        self.responses[item]
    }

    /// Responses to every item of the bank.
    pub fn all_responses(&self) -> &[u8] {
        &self.responses
    }
}

impl Responder for SimulatedExaminee {
    fn respond(&mut self, item: usize) -> std::result::Result<u8, String> {
        self.responses
            .get(item)
            .copied()
            .ok_or_else(|| format!("item {item} outside the bank"))
    }

    fn theta(&self) -> Option<&[f64]> {
        Some(&self.theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub selector: String,
    pub examinee: usize,
    pub theta: Option<Vec<f64>>,
    pub items: Vec<usize>,
    pub responses: Vec<u8>,
    /// `summaries[t]` describes the posterior after `t` items.
    pub summaries: Vec<PosteriorSummary>,
    /// First step at which the variance rule held, or the number of items
    /// administered if it never did.
    pub termination_step: usize,
    pub terminated: bool,
    /// False when the responder aborted.
    pub complete: bool,
    pub abort_reason: Option<String>,
    /// Sampling plus selection wall time per administered item.
    pub select_seconds: Vec<f64>,
}

impl SessionRecord {
    /// Posterior summary after `t` items, carrying the last one forward.
    pub fn summary_at(&self, t: usize) -> &PosteriorSummary {
        &self.summaries[t.min(self.summaries.len() - 1)]
    }
}

pub fn run_session(
    bank: &Arc<ItemBank>,
    selector: &Selector,
    responder: &mut dyn Responder,
    cfg: &SessionConfig,
    examinee: usize,
) -> Result<SessionRecord> {
    let mut eng = SessionEngine::new(bank.clone(), selector.clone(), cfg.clone())?;
    let mut summaries = Vec::new();
    let mut select_seconds = Vec::new();
    let mut abort_reason = None;
    loop {
        let obs = eng.observe()?;
        summaries.push(obs.summary.clone());
        let sample_seconds = obs.sample_seconds;
        if eng.is_finished()? {
            break;
        }
        let start = Instant::now();
        let item = eng.next_item()?;
        select_seconds.push(sample_seconds + start.elapsed().as_secs_f64());
        match responder.respond(item) {
            Ok(y) => eng.record(item, y)?,
            Err(reason) => {
                abort_reason = Some(reason);
                break;
            }
        }
    }
    Ok(SessionRecord {
        selector: selector.id(),
        examinee,
        theta: responder.theta().map(<[f64]>::to_vec),
        items: eng.items().to_vec(),
        responses: eng.responses().to_vec(),
        summaries,
        termination_step: eng.termination_step().unwrap_or(eng.step()),
        terminated: eng.termination_step().is_some(),
        complete: abort_reason.is_none(),
        abort_reason,
        select_seconds,
    })
}
