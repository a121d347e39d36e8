//! Offline double Q-learning against simulated examinees.

use std::path::Path;
use std::sync::Arc;

use deepcat_core::mirt::simulate_response;
use deepcat_core::{derive_seed, normal, seeded_rng, EngineRng, ItemBank, SunPosterior};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RlError};
use crate::network::{masked_argmax, Example, NetworkConfig, QNetwork};
use crate::optim::{clip_global_norm, Adam};
use crate::replay::{ReplayBuffer, Transition};
use crate::state::StateSnapshot;

/// Latent-trait distribution of simulated examinees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExamineeDistribution {
    #[default]
    StandardNormal,
    /// Independent coordinates θ_k ~ N(mean_k, sd_k²).
    Normal { mean: Vec<f64>, sd: Vec<f64> },
}

impl ExamineeDistribution {
    pub fn draw<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<f64> {
        match self {
            Self::StandardNormal => (0..k).map(|_| rng.sample(StandardNormal)).collect(),
            Self::Normal { mean, sd } => (0..k)
                .map(|i| mean[i] + sd[i] * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        if let Self::Normal { mean, sd } = self {
            if mean.len() != k || sd.len() != k {
                return Err(RlError::InvalidConfig("examinee distribution dimension".into()));
            }
            if sd.iter().any(|s| !(*s >= 0.0)) {
                return Err(RlError::InvalidConfig("examinee sd must be non-negative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_steps: u64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Target network sync period, in episodes.
    pub target_sync: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub tau2: f64,
    /// Prioritized factors, 0-based.
    pub priority: Vec<usize>,
    pub checkpoint_every: usize,
    pub reward_window: usize,
    pub log_every: usize,
    /// Posterior draws per state.
    pub n_samples: usize,
    pub examinees: ExamineeDistribution,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 80_000,
            horizon: 60,
            gamma: 0.95,
            eps_start: 0.99,
            eps_end: 0.01,
            eps_decay_steps: 700_000,
            buffer_capacity: 200_000,
            batch_size: 32,
            target_sync: 10,
            learning_rate: 1e-4,
            grad_clip: 10.0,
            tau2: 0.16,
            priority: vec![0],
            checkpoint_every: 1000,
            reward_window: 500,
            log_every: 100,
            n_samples: 1000,
            examinees: ExamineeDistribution::StandardNormal,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        let bad = |m: &str| Err(RlError::InvalidConfig(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("discount must lie in (0, 1]");
        }
        if !(0.0 <= self.eps_end && self.eps_end <= self.eps_start && self.eps_start <= 1.0) {
            return bad("exploration range must satisfy 0 <= end <= start <= 1");
        }
        if self.horizon == 0 || self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("horizon, batch size and buffer capacity must be positive");
        }
        if self.target_sync == 0 || self.checkpoint_every == 0 || self.log_every == 0 || self.reward_window == 0 {
            return bad("periods must be positive");
        }
        if !(self.tau2 > 0.0) {
            return bad("variance threshold must be positive");
        }
        if self.priority.is_empty() || self.priority.iter().any(|&f| f >= k) {
            return bad("prioritized factors must be a non-empty subset of 0..K");
        }
        if self.n_samples < 2 {
            return bad("need at least two posterior draws per state");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        self.examinees.validate(k)
    }

    /// ε after `step` environment steps.
    pub fn epsilon(&self, step: u64) -> f64 {
        if step >= self.eps_decay_steps {
            return self.eps_end;
        }
        let frac = step as f64 / self.eps_decay_steps as f64;
        (self.eps_start - frac * (self.eps_start - self.eps_end)).max(self.eps_end)
    }
}

/// 0 once every prioritized marginal variance is at most τ², otherwise −1.
pub fn reward(variances: &[f64], priority: &[usize], tau2: f64) -> f64 {
    let worst = priority.iter().map(|&k| variances[k]).fold(f64::NEG_INFINITY, f64::max);
    if worst > tau2 {
        -1.0
    } else {
        0.0
    }
}

/// Regression target: −1 on termination, otherwise −1 + γ·Q_target(s', a*)
/// with a* the primary network's masked argmax at s'.
pub fn double_q_target(primary: &QNetwork, target: &QNetwork, t: &Transition, gamma: f64) -> Result<f64> {
    if t.done {
        return Ok(-1.0);
    }
    if !t.next_available().iter().any(|&a| a) {
        return Err(RlError::EmptyNextActions);
    }
    let qp = primary.forward(&t.next_state)?;
    let a = masked_argmax(&qp, t.next_available()).ok_or(RlError::EmptyNextActions)?;
    let qt = target.forward(&t.next_state)?;
    Ok(-1.0 + gamma * qt[a])
}

fn batch_targets(primary: &QNetwork, target: &QNetwork, batch: &[&Transition], gamma: f64) -> Result<Vec<f64>> {
    let live: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].done).collect();
    let mut y = vec![-1.0; batch.len()];
    if live.is_empty() {
        return Ok(y);
    }
    let next: Vec<&StateSnapshot> = live.iter().map(|&i| batch[i].next_state.as_ref()).collect();
    let qp = primary.forward_batch(&next)?;
    let qt = target.forward_batch(&next)?;
    for (r, &i) in live.iter().enumerate() {
        let row = qp.row(r).to_vec();
        let a = masked_argmax(&row, batch[i].next_available()).ok_or(RlError::EmptyNextActions)?;
        y[i] = -1.0 + gamma * qt[(r, a)];
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub episode: usize,
    pub epsilon: f64,
    pub mean_reward_500: f64,
    pub loss: f64,
}

pub fn write_log_csv(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Network from the checkpoint with the best running mean reward.
    pub network: QNetwork,
    pub best_episode: usize,
    pub best_mean_reward: Option<f64>,
    pub final_network: QNetwork,
    pub log: Vec<LogRow>,
    pub episode_rewards: Vec<f64>,
    pub steps: u64,
    /// Set when training stopped on a non-finite loss.
    pub diverged: Option<String>,
}

impl TrainOutcome {
    /// Mean episode reward over consecutive non-overlapping windows.
    pub fn window_means(&self, window: usize) -> Vec<f64> {
        self.episode_rewards
            .chunks(window)
            .filter(|c| c.len() == window)
            .map(|c| c.iter().sum::<f64>() / window as f64)
            .collect()
    }
}

fn window_mean(rewards: &[f64], window: usize) -> f64 {
    let tail = &rewards[rewards.len().saturating_sub(window)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

struct Streams {
    env: EngineRng,
    explore: EngineRng,
    replay: EngineRng,
}

/// Summary of one simulated episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeReport {
    pub episode: usize,
    pub reward: f64,
    pub actions: Vec<usize>,
    pub terminated: bool,
}

/// Episode-at-a-time driver for the training loop.
pub struct Trainer<'a> {
    bank: &'a ItemBank,
    cfg: TrainConfig,
    primary: QNetwork,
    target: QNetwork,
    opt: Adam,
    buffer: ReplayBuffer,
    rng: Streams,
    horizon: usize,
    episode: usize,
    steps: u64,
    rewards: Vec<f64>,
    loss_sum: f64,
    loss_n: usize,
    best: Option<(QNetwork, usize, f64)>,
    last_stable: QNetwork,
    log: Vec<LogRow>,
    diverged: Option<String>,
}

impl<'a> Trainer<'a> {
    pub fn new(bank: &'a ItemBank, net_config: NetworkConfig, cfg: TrainConfig) -> Result<Self> {
        let (k, j) = (bank.n_factors(), bank.n_items());
        cfg.validate(k)?;
        if net_config.n_factors != k || net_config.n_items != j {
            return Err(RlError::Shape(format!(
                "network built for K={}, J={} but bank has K={k}, J={j}",
                net_config.n_factors, net_config.n_items
            )));
        }
        let primary = QNetwork::new(net_config)?;
        let rng = Streams {
            env: seeded_rng(derive_seed(cfg.seed, 1)),
            explore: seeded_rng(derive_seed(cfg.seed, 2)),
            replay: seeded_rng(derive_seed(cfg.seed, 3)),
        };
        Ok(Self {
            bank,
            horizon: cfg.horizon.min(j),
            opt: Adam::new(&primary, cfg.learning_rate),
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            target: primary.clone(),
            last_stable: primary.clone(),
            primary,
            rng,
            episode: 0,
            steps: 0,
            rewards: Vec::with_capacity(cfg.episodes),
            loss_sum: 0.0,
            loss_n: 0,
            best: None,
            log: Vec::new(),
            diverged: None,
            cfg,
        })
    }

    pub fn primary(&self) -> &QNetwork {
        &self.primary
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    pub fn diverged(&self) -> Option<&str> {
        self.diverged.as_deref()
    }

    pub fn is_finished(&self) -> bool {
        self.diverged.is_some() || self.episode >= self.cfg.episodes
    }

    /// Simulate one episode with ε-greedy actions, regressing after every step
    /// once the buffer holds more than a batch.
    pub fn run_episode(&mut self) -> Result<EpisodeReport> {
        let (bank, k) = (self.bank, self.bank.n_factors());
        self.episode += 1;
        let ep = self.episode;
        let theta = self.cfg.examinees.draw(k, &mut self.rng.env);
        let mut post = SunPosterior::prior(k);
        let samples = post.sample(self.cfg.n_samples, &mut self.rng.env)?;
        let mut state = Arc::new(StateSnapshot::observe(bank, &post, &samples)?);
        let mut ep_reward = 0.0;
        let mut actions = Vec::new();
        let mut terminated = false;

        for _ in 0..self.horizon {
            let eps = self.cfg.epsilon(self.steps);
            let action = if self.rng.explore.random::<f64>() < eps {
                let avail = state.available_items();
                avail[self.rng.explore.random_range(0..avail.len())]
            } else {
                self.primary.act(&state)?
            };
            actions.push(action);
            let p = normal::cdf(bank.linear_predictor(action, &theta));
            let y = simulate_response(&mut self.rng.env, p)?;
            let next_post = post.update_item(bank, action, y)?;
            let next_samples = next_post.sample(self.cfg.n_samples, &mut self.rng.env)?;
            let var = next_samples.moments()?.var;
            let r = reward(&var, &self.cfg.priority, self.cfg.tau2);
            let done = r == 0.0;
            let next_state = Arc::new(StateSnapshot::observe(bank, &next_post, &next_samples)?);
            ep_reward += r;
            self.steps += 1;

            // a non-terminal step that exhausts the bank cannot be bootstrapped
            if done || next_state.available.iter().any(|&a| a) {
                self.buffer.push(Transition {
                    state: state.clone(),
                    action,
                    reward: r,
                    next_state: next_state.clone(),
                    done,
                });
            }

            if self.buffer.len() > self.cfg.batch_size {
                match regress(
                    &mut self.primary,
                    &self.target,
                    &mut self.opt,
                    &self.buffer,
                    &self.cfg,
                    &mut self.rng.replay,
                ) {
                    Ok(loss) => {
                        self.loss_sum += loss;
                        self.loss_n += 1;
                    }
                    Err(RlError::NonFinite(what)) => {
                        self.diverged = Some(format!("non-finite {what} at episode {ep}, step {}", self.steps));
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            if done {
                terminated = true;
                break;
            }
            post = next_post;
            state = next_state;
        }

        self.rewards.push(ep_reward);
        if self.diverged.is_none() {
            self.end_of_episode();
        }
        Ok(EpisodeReport {
            episode: ep,
            reward: ep_reward,
            actions,
            terminated,
        })
    }

    fn end_of_episode(&mut self) {
        let ep = self.episode;
        if ep % self.cfg.target_sync == 0 {
            self.target = self.primary.clone();
        }
        if ep % self.cfg.checkpoint_every == 0 {
            let mean = window_mean(&self.rewards, self.cfg.reward_window);
            self.last_stable = self.primary.clone();
            if self.best.as_ref().is_none_or(|b| mean > b.2) {
                self.best = Some((self.primary.clone(), ep, mean));
            }
        }
        if ep % self.cfg.log_every == 0 {
            let row = LogRow {
                episode: ep,
                epsilon: self.cfg.epsilon(self.steps),
                mean_reward_500: window_mean(&self.rewards, self.cfg.reward_window),
                loss: if self.loss_n > 0 {
                    self.loss_sum / self.loss_n as f64
                } else {
                    f64::NAN
                },
            };
            self.log.push(row);
            self.loss_sum = 0.0;
            self.loss_n = 0;
        }
    }

    pub fn finish(self) -> TrainOutcome {
        let final_network = if self.diverged.is_some() {
            self.last_stable
        } else {
            self.primary
        };
        let (network, best_episode, best_mean_reward) = match self.best {
            Some((net, ep, m)) => (net, ep, Some(m)),
            None => (final_network.clone(), self.rewards.len(), None),
        };
        TrainOutcome {
            network,
            best_episode,
            best_mean_reward,
            final_network,
            log: self.log,
            episode_rewards: self.rewards,
            steps: self.steps,
            diverged: self.diverged,
        }
    }
}

/// Run the whole training loop. `on_log` sees every log row as it is produced.
pub fn train(
    bank: &ItemBank,
    net_config: NetworkConfig,
    cfg: &TrainConfig,
    mut on_log: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(bank, net_config, cfg.clone())?;
    while !trainer.is_finished() {
        let logged = trainer.log().len();
        trainer.run_episode()?;
        for row in &trainer.log()[logged..] {
            on_log(row);
        }
    }
    Ok(trainer.finish())
}

fn regress<R: Rng + ?Sized>(
    primary: &mut QNetwork,
    target: &QNetwork,
    opt: &mut Adam,
    buffer: &ReplayBuffer,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<f64> {
    let batch = buffer.sample(cfg.batch_size, rng);
    let y = batch_targets(primary, target, &batch, cfg.gamma)?;
    let examples: Vec<Example<'_>> = batch
        .iter()
        .zip(&y)
        .map(|(t, &target)| Example {
            state: &t.state,
            action: t.action,
            target,
        })
        .collect();
    let (loss, mut grads) = primary.loss_and_gradients(&examples)?;
    clip_global_norm(&mut grads, cfg.grad_clip);
    opt.step(primary, &grads);
    if !primary.is_finite() {
        return Err(RlError::NonFinite("weights".into()));
    }
    Ok(loss)
}
