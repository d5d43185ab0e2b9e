use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::critic::{bellman_target, Critic, TwinCritics};
use super::diffusion::{DiffusionPolicy, NoiseSchedule};
use super::env::AllocEnv;
use super::nn::{Adam, Grads, Matrix};
use super::replay::{Record, ReplayBuffer};
use super::state::{AllocAction, AllocState};
use crate::rng::{self, SimRng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AddConfig {
    /// Denoising steps T.
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub gamma: f64,
    /// Adam learning rate η, shared by policy and critics.
    pub lr: f64,
    pub batch: usize,
    pub episodes: usize,
    pub buffer_capacity: usize,
    /// Gradient steps between target-critic syncs.
    pub sync_period: usize,
    pub hidden: Vec<usize>,
    /// Exploration std as a fraction of each cap, decayed linearly from
    /// start to end over training.
    pub explore_start: f64,
    pub explore_end: f64,
    /// Multiplies utilities before they are stored as rewards.
    pub reward_scale: f64,
    /// Divides cap and info sizes in the state features.
    pub token_scale: f64,
    /// Episodes played with uniformly random actions before the first
    /// gradient step.
    pub warmup: usize,
    /// Weight of the `mean(b_0²)` penalty that keeps the squash away from
    /// saturation.
    pub preact_penalty: f64,
    /// Critic steps per policy step.
    pub policy_delay: usize,
    /// Gradient steps after each episode.
    pub updates_per_episode: usize,
}

impl Default for AddConfig {
    fn default() -> Self {
        Self {
            steps: 5,
            beta_start: 0.05,
            beta_end: 0.5,
            gamma: 0.95,
            lr: 1e-4,
            batch: 64,
            episodes: 2000,
            buffer_capacity: 100_000,
            sync_period: 10,
            hidden: vec![256, 256],
            explore_start: 0.1,
            explore_end: 0.01,
            reward_scale: 0.01,
            token_scale: 4096.0,
            warmup: 256,
            preact_penalty: 1e-2,
            policy_delay: 1,
            updates_per_episode: 1,
        }
    }
}

impl AddConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::param("T", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::param("gamma", "must lie in [0, 1]"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param("lr", "must be positive"));
        }
        if self.batch == 0 || self.buffer_capacity == 0 {
            return Err(Error::param("batch", "batch and buffer capacity must be positive"));
        }
        if !(self.token_scale > 0.0) || !(self.reward_scale > 0.0) {
            return Err(Error::param("token_scale", "scales must be positive"));
        }
        if self.explore_start < 0.0 || self.explore_end < 0.0 {
            return Err(Error::param("explore", "exploration std must be non-negative"));
        }
        if !(self.preact_penalty >= 0.0) || self.policy_delay == 0 {
            return Err(Error::param(
                "preact_penalty",
                "penalty must be non-negative and policy_delay positive",
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::param("hidden", "layer widths must be positive"));
        }
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end).map(|_| ())
    }

    /// Exploration std `episode` episodes after warmup.
    pub fn explore_sigma(&self, episode: usize) -> f64 {
        let span = self.episodes.saturating_sub(self.warmup);
        let frac = if span <= 1 {
            1.0
        } else {
            (episode as f64 / (span - 1) as f64).min(1.0)
        };
        self.explore_start + (self.explore_end - self.explore_start) * frac
    }
}

/// A policy ready for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct AddAgent {
    pub policy: DiffusionPolicy,
    pub critics: TwinCritics,
    pub token_scale: f64,
}

impl AddAgent {
    pub fn new(users: usize, config: &AddConfig, rng: &mut SimRng) -> Result<Self> {
        config.validate()?;
        let schedule = NoiseSchedule::linear(config.steps, config.beta_start, config.beta_end)?;
        Ok(Self {
            policy: DiffusionPolicy::new(users, &config.hidden, schedule, rng),
            critics: TwinCritics::new(users, &config.hidden, config.sync_period, rng),
            token_scale: config.token_scale,
        })
    }

    /// Deterministic allocation.
    pub fn allocate(&self, state: &AllocState) -> AllocAction {
        self.policy.allocate(state, self.token_scale)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: AddAgent,
    /// Utility of the executed action per episode.
    pub rewards: Vec<f64>,
    /// Mean squared Bellman error per gradient step.
    pub critic_loss: Vec<f64>,
}

/// Mutable training state: networks, optimizers and the replay buffer.
pub struct Trainer {
    pub agent: AddAgent,
    pub config: AddConfig,
    pub buffer: ReplayBuffer,
    policy_opt: Adam,
    critic_opt: [Adam; 2],
    updates: usize,
}

impl Trainer {
    pub fn new(users: usize, config: AddConfig, seed: u64) -> Result<Self> {
        let agent = AddAgent::new(users, &config, &mut rng::split(seed, 1))?;
        let policy_opt = Adam::new(&agent.policy.net, config.lr);
        let critic_opt = [
            Adam::new(&agent.critics.online[0].net, config.lr),
            Adam::new(&agent.critics.online[1].net, config.lr),
        ];
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity),
            agent,
            config,
            policy_opt,
            critic_opt,
            updates: 0,
        })
    }

    /// One critic step and, every `policy_delay` calls, one policy step on
    /// a replay batch. Returns the mean squared Bellman error.
    pub fn update(&mut self, rng: &mut SimRng) -> Result<f64> {
        let batch = self.buffer.sample(rng, self.config.batch);
        if batch.is_empty() {
            return Ok(0.0);
        }
        let n = batch.len();
        let step = self.updates;
        let features = Matrix::from_rows(&batch.iter().map(|r| &r.features[..]).collect::<Vec<_>>());
        let fractions = Matrix::from_rows(&batch.iter().map(|r| &r.fractions[..]).collect::<Vec<_>>());
        let rewards: Vec<f64> = batch.iter().map(|r| r.reward).collect();

        let critics = &mut self.agent.critics;
        let q1 = critics.target[0].trace(&fractions, &features).output.data;
        let q2 = critics.target[1].trace(&fractions, &features).output.data;
        let mut split: [Vec<(usize, f64)>; 2] = [Vec::new(), Vec::new()];
        for b in 0..n {
            let (y, j) = bellman_target(rewards[b], q1[b], q2[b], self.config.gamma);
            split[j as usize].push((b, y));
        }
        let mut loss = 0.0;
        let mut grads = Vec::with_capacity(2);
        for (k, rows) in split.iter().enumerate() {
            let pick = |m: &Matrix| Matrix::from_rows(&rows.iter().map(|&(b, _)| m.row(b)).collect::<Vec<_>>());
            let targets: Vec<f64> = rows.iter().map(|&(_, y)| y).collect();
            let (l, g) = critic_gradient(&critics.online[k], &pick(&fractions), &pick(&features), &targets, n);
            loss += l;
            grads.push(g);
        }
        if !loss.is_finite() || !grads.iter().all(Grads::is_finite) {
            return Err(Error::Diverged {
                step,
                what: "critic loss",
            });
        }
        for (k, g) in grads.iter().enumerate() {
            self.critic_opt[k].step(&mut critics.online[k].net, g);
        }

        critics.tick();
        self.updates += 1;
        if !self.updates.is_multiple_of(self.config.policy_delay) {
            return Ok(loss);
        }

        let (b_t, z) = self.agent.policy.draw_noise(n, rng);
        let (_, pgrads) = policy_gradient(
            &self.agent.policy,
            &critics.online,
            &features,
            b_t,
            &z,
            self.config.preact_penalty,
        );
        if !pgrads.is_finite() {
            return Err(Error::Diverged {
                step,
                what: "policy gradient",
            });
        }
        self.policy_opt.step(&mut self.agent.policy.net, &pgrads);
        Ok(loss)
    }

    pub fn train<E: AllocEnv + ?Sized>(mut self, env: &E, seed: u64) -> Result<TrainOutcome> {
        if env.users() != self.agent.policy.users {
            return Err(Error::param("users", "environment and policy disagree on user count"));
        }
        let mut env_rng = rng::split(seed, 2);
        let mut act_rng = rng::split(seed, 3);
        let mut learn_rng = rng::split(seed, 4);
        let mut rewards = Vec::with_capacity(self.config.episodes);
        let mut critic_loss = Vec::new();
        for episode in 0..self.config.episodes {
            let state = env.draw_state(&mut env_rng)?;
            let action = if episode < self.config.warmup {
                let fractions: Vec<f64> = (0..state.len()).map(|_| act_rng.random::<f64>()).collect();
                AllocAction::from_fractions(&fractions, &state.caps())
            } else {
                let sigma = self.config.explore_sigma(episode - self.config.warmup);
                self.agent
                    .policy
                    .sample_action(&state, sigma, self.config.token_scale, &mut act_rng)
            };
            let utility = env.utility(&state, &action)?;
            if !utility.is_finite() {
                return Err(Error::Diverged {
                    step: episode,
                    what: "utility",
                });
            }
            rewards.push(utility);
            self.buffer.push(Record {
                features: state.features(self.config.token_scale),
                fractions: action.fractions(&state.caps()),
                reward: utility * self.config.reward_scale,
            });
            if self.buffer.len() >= self.config.warmup.max(1) {
                for _ in 0..self.config.updates_per_episode {
                    critic_loss.push(self.update(&mut learn_rng)?);
                }
            }
        }
        Ok(TrainOutcome {
            agent: self.agent,
            rewards,
            critic_loss,
        })
    }
}

/// Squared Bellman error `Σ_b (Q(f_b, s_b) - y_b)² / batch` of one critic
/// on the rows routed to it, and its parameter gradient.
pub fn critic_gradient(
    critic: &Critic,
    fractions: &Matrix,
    features: &Matrix,
    targets: &[f64],
    batch: usize,
) -> (f64, Grads) {
    let scale = 1.0 / batch.max(1) as f64;
    let mut grads = Grads::zeros_like(&critic.net);
    if targets.is_empty() {
        return (0.0, grads);
    }
    let trace = critic.trace(fractions, features);
    let mut loss = 0.0;
    let weights = targets
        .iter()
        .zip(&trace.output.data)
        .map(|(&y, &q)| {
            let err = q - y;
            loss += err * err * scale;
            2.0 * err * scale
        })
        .collect();
    critic.backward(
        &trace,
        features,
        &Matrix::from_vec(targets.len(), 1, weights),
        &mut grads,
    );
    (loss, grads)
}

/// Policy objective with the chain noise held fixed,
/// `mean_b[-min(Q₁, Q₂)(σ(b₀), s)] + penalty · mean_b |b₀|²`,
/// and its pathwise gradient through every denoising step.
pub fn policy_gradient(
    policy: &DiffusionPolicy,
    critics: &[Critic; 2],
    features: &Matrix,
    b_t: Matrix,
    z: &[Matrix],
    penalty: f64,
) -> (f64, Grads) {
    let n = features.rows;
    let scale = 1.0 / n.max(1) as f64;
    let chain = policy.run_chain(features, b_t, Some(z));
    let f = chain.fractions();
    let t1 = critics[0].trace(&f, features);
    let t2 = critics[1].trace(&f, features);
    let second: Vec<bool> = (0..n).map(|b| t2.output.data[b] < t1.output.data[b]).collect();
    let unit = |pick_second: bool| {
        let w = second
            .iter()
            .map(|&s| if s == pick_second { -scale } else { 0.0 })
            .collect();
        Matrix::from_vec(n, 1, w)
    };
    let g1 = critics[0].net.input_gradient(&t1, &unit(false));
    let g2 = critics[1].net.input_gradient(&t2, &unit(true));
    let grad_f = Matrix::from_vec(
        f.rows,
        f.cols,
        g1.data.iter().zip(&g2.data).map(|(a, b)| a + b).collect(),
    );
    let b0 = chain.b0();
    let grad_b0 = Matrix::from_vec(
        b0.rows,
        b0.cols,
        b0.data.iter().map(|b| 2.0 * penalty * scale * b).collect(),
    );
    let mut objective = 0.0;
    for (b, &use_second) in second.iter().enumerate().take(n) {
        let q = if use_second {
            t2.output.data[b]
        } else {
            t1.output.data[b]
        };
        let sq: f64 = b0.row(b).iter().map(|v| v * v).sum();
        objective += scale * (penalty * sq - q);
    }
    let mut grads = Grads::zeros_like(&policy.net);
    policy.backward(&chain, features, &grad_f, &grad_b0, &mut grads);
    (objective, grads)
}

pub fn train<E: AllocEnv + ?Sized>(env: &E, config: &AddConfig, seed: u64) -> Result<TrainOutcome> {
    Trainer::new(env.users(), config.clone(), seed)?.train(env, seed)
}
