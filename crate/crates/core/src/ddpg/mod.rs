//! Deep deterministic policy gradient: replay buffer, actor/critic with
//! soft-updated target copies, trained on the pendulum.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{self, EnvParams, Observation, ObservationNoise, PendulumState, Transition, EPISODE_STEPS};
use crate::error::{invalid, Error, Result};
use crate::nnet::{Activation, AdamConfig, GradientSet, MlpNetwork, NetworkCheckpoint};
use crate::numerics::Matrix;
use crate::rng::{self, SimRng};
use crate::trajectory::{TrajectoryRecord, TrajectoryRow};

pub const DEFAULT_BUFFER_CAPACITY: usize = 1_000_000;
pub const AGENT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdpgConfig {
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub hidden: usize,
    pub steps_per_episode: usize,
    /// Exploration σ decays linearly from `noise_start` to `noise_end` over
    /// the first `noise_decay_fraction` of the episodes.
    pub noise_start: f64,
    pub noise_end: f64,
    pub noise_decay_fraction: f64,
    pub seed: u64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            tau: 0.001,
            actor_lr: 1e-3,
            critic_lr: 1e-2,
            batch_size: 64,
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
            hidden: 64,
            steps_per_episode: EPISODE_STEPS,
            noise_start: 1.0,
            noise_end: 0.05,
            noise_decay_fraction: 0.5,
            seed: 0,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(invalid(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(invalid(format!("tau {} outside [0, 1]", self.tau)));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(invalid("learning rates must be positive"));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.hidden == 0 || self.steps_per_episode == 0 {
            return Err(invalid("batch size, buffer capacity, hidden width and episode length must be positive"));
        }
        if !(self.noise_start >= 0.0 && self.noise_end >= 0.0) {
            return Err(invalid("exploration noise must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.noise_decay_fraction) {
            return Err(invalid("noise decay fraction outside [0, 1]"));
        }
        Ok(())
    }

    /// Exploration σ for episode `episode` of `total`.
    pub fn noise_sigma(&self, episode: usize, total: usize) -> f64 {
        let span = self.noise_decay_fraction * total as f64;
        if span <= 0.0 {
            return self.noise_end;
        }
        let frac = episode as f64 / span;
        if frac >= 1.0 {
            return self.noise_end;
        }
        self.noise_start + (self.noise_end - self.noise_start) * frac
    }
}

/// Fixed-capacity ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid("replay buffer capacity must be positive"));
        }
        Ok(Self {
            capacity,
            storage: Vec::new(),
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.storage.get(index)
    }

    /// Appends, overwriting the oldest entry once full.
    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.storage.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let n = self.storage.len();
        Ok((0..batch_size).map(|_| rng.random_range(0..n)).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<Transition>> {
        Ok(self
            .sample_indices(batch_size, rng)?
            .into_iter()
            .map(|i| self.storage[i])
            .collect())
    }
}

/// `r + γ·q_next`.
pub fn td_target(reward: f64, q_next: f64, gamma: f64) -> f64 {
    reward + gamma * q_next
}

fn critic_inputs(xs: impl Iterator<Item = (Observation, f64)>) -> Matrix {
    let rows: Vec<Vec<f64>> = xs.map(|(x, u)| vec![x[0], x[1], x[2], u]).collect();
    Matrix::from_rows(&rows)
}

fn observations(batch: &[Transition], next: bool) -> Matrix {
    let rows: Vec<Vec<f64>> = batch
        .iter()
        .map(|t| if next { t.x_next.to_vec() } else { t.x.to_vec() })
        .collect();
    Matrix::from_rows(&rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdpgAgent {
    pub actor: MlpNetwork,
    pub critic: MlpNetwork,
    pub target_actor: MlpNetwork,
    pub target_critic: MlpNetwork,
    pub config: DdpgConfig,
}

impl DdpgAgent {
    /// Actor 3→h→h→1 bounded by `2·tanh`; critic 4→h→h→1 on `(x, u)`.
    /// Targets start as exact copies.
    pub fn new<R: Rng + ?Sized>(config: &DdpgConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let actor = MlpNetwork::new(
            &[3, h, h, 1],
            &[Activation::Relu, Activation::Relu, Activation::ScaledTanh { scale: 2.0 }],
            rng,
        )?;
        let critic = MlpNetwork::new(&[4, h, h, 1], &[Activation::Relu, Activation::Relu, Activation::Linear], rng)?;
        Ok(Self {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            config: config.clone(),
        })
    }

    /// Greedy torque.
    pub fn act(&self, x: &Observation) -> Result<f64> {
        Ok(self.actor.forward(x)?[0])
    }

    /// Greedy torque plus Gaussian noise of scale `sigma`, clamped to ±2.
    pub fn act_explore<R: Rng + ?Sized>(&self, x: &Observation, sigma: f64, rng: &mut R) -> Result<f64> {
        let n: f64 = rng.sample(StandardNormal);
        Ok((self.act(x)? + sigma * n).clamp(-2.0, 2.0))
    }

    /// `y = −cost + γ·Q'(x', μ'(x'))` per sample.
    pub fn td_targets(&self, batch: &[Transition]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let next = self.target_actor.forward_batch(&observations(batch, true))?;
        let a_next = next.output();
        let inputs = critic_inputs(batch.iter().enumerate().map(|(i, t)| (t.x_next, a_next[(i, 0)])));
        let q_next = self.target_critic.forward_batch(&inputs)?;
        Ok(batch
            .iter()
            .enumerate()
            .map(|(i, t)| td_target(-t.cost, q_next.output()[(i, 0)], self.config.gamma))
            .collect())
    }

    /// Mean squared TD error against `targets` and its critic gradient.
    pub fn critic_loss_and_gradient(&self, batch: &[Transition], targets: &[f64]) -> Result<(f64, GradientSet)> {
        if batch.is_empty() || batch.len() != targets.len() {
            return Err(invalid("batch and targets must be non-empty and equally long"));
        }
        let n = batch.len() as f64;
        let cache = self.critic.forward_batch(&critic_inputs(batch.iter().map(|t| (t.x, t.u))))?;
        let mut upstream = Matrix::zeros(batch.len(), 1);
        let mut loss = 0.0;
        for (i, y) in targets.iter().enumerate() {
            let e = cache.output()[(i, 0)] - y;
            loss += e * e;
            upstream[(i, 0)] = 2.0 * e / n;
        }
        let (grads, _) = self.critic.backward_batch(&cache, &upstream)?;
        Ok((loss / n, grads))
    }

    /// One Adam step on the critic; returns the pre-step loss.
    pub fn critic_update(&mut self, batch: &[Transition]) -> Result<f64> {
        let targets = self.td_targets(batch)?;
        let (loss, grads) = self.critic_loss_and_gradient(batch, &targets)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Diverged(format!("critic loss {loss}")));
        }
        self.critic.adam_step(&grads, &AdamConfig::with_lr(self.config.critic_lr))?;
        Ok(loss)
    }

    /// `−mean Q(x, μ(x))` and its gradient w.r.t. the actor parameters.
    pub fn actor_loss_and_gradient(&self, batch: &[Transition]) -> Result<(f64, GradientSet)> {
        if batch.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let n = batch.len() as f64;
        let actor_cache = self.actor.forward_batch(&observations(batch, false))?;
        let actions = actor_cache.output();
        let inputs = critic_inputs(batch.iter().enumerate().map(|(i, t)| (t.x, actions[(i, 0)])));
        let critic_cache = self.critic.forward_batch(&inputs)?;
        let loss = -critic_cache.output().as_slice().iter().sum::<f64>() / n;
        let upstream = Matrix::from_fn(batch.len(), 1, |_, _| -1.0 / n);
        let d_input = self.critic.input_gradient_batch(&critic_cache, &upstream)?;
        let d_action = Matrix::from_fn(batch.len(), 1, |i, _| d_input[(i, 3)]);
        let (grads, _) = self.actor.backward_batch(&actor_cache, &d_action)?;
        Ok((loss, grads))
    }

    /// One Adam step ascending mean `Q(x, μ(x))`.
    pub fn actor_update(&mut self, batch: &[Transition]) -> Result<()> {
        let (_, grads) = self.actor_loss_and_gradient(batch)?;
        if !grads.is_finite() {
            return Err(Error::Diverged("non-finite actor gradient".into()));
        }
        self.actor.adam_step(&grads, &AdamConfig::with_lr(self.config.actor_lr))
    }

    pub fn soft_update_targets(&mut self) -> Result<()> {
        self.target_actor.soft_update(&self.actor, self.config.tau)?;
        self.target_critic.soft_update(&self.critic, self.config.tau)
    }

    pub fn to_checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            version: AGENT_VERSION,
            config: self.config.clone(),
            actor: self.actor.to_checkpoint(),
            critic: self.critic.to_checkpoint(),
            target_actor: self.target_actor.to_checkpoint(),
            target_critic: self.target_critic.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ck: AgentCheckpoint) -> Result<Self> {
        if ck.version != AGENT_VERSION {
            return Err(Error::CheckpointVersion {
                found: ck.version,
                expected: AGENT_VERSION,
            });
        }
        ck.config.validate()?;
        let agent = Self {
            actor: MlpNetwork::from_checkpoint(ck.actor)?,
            critic: MlpNetwork::from_checkpoint(ck.critic)?,
            target_actor: MlpNetwork::from_checkpoint(ck.target_actor)?,
            target_critic: MlpNetwork::from_checkpoint(ck.target_critic)?,
            config: ck.config,
        };
        if agent.actor.layer_sizes() != [3, agent.config.hidden, agent.config.hidden, 1]
            || agent.critic.layer_sizes() != [4, agent.config.hidden, agent.config.hidden, 1]
            || !agent.actor.same_architecture(&agent.target_actor)
            || !agent.critic.same_architecture(&agent.target_critic)
        {
            return Err(invalid("agent checkpoint has inconsistent network shapes"));
        }
        Ok(agent)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_checkpoint())?)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.display().to_string()));
        }
        Self::from_checkpoint(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// On-disk agent: hyperparameters and the four networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub version: u32,
    pub config: DdpgConfig,
    pub actor: NetworkCheckpoint,
    pub critic: NetworkCheckpoint,
    pub target_actor: NetworkCheckpoint,
    pub target_critic: NetworkCheckpoint,
}

/// Per-episode returns (negated summed cost).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub returns: Vec<f64>,
}

impl LearningCurve {
    /// Mean return over `len` episodes starting at `start`.
    pub fn window_mean(&self, start: usize, len: usize) -> Option<f64> {
        let end = start.checked_add(len)?;
        if len == 0 || end > self.returns.len() {
            return None;
        }
        Some(self.returns[start..end].iter().sum::<f64>() / len as f64)
    }
}

/// Trains from scratch for `episodes` random-reset episodes. Learning starts
/// once the buffer holds a full batch; each step then performs one critic
/// update, one actor update and one soft target update.
pub fn train(episodes: usize, config: &DdpgConfig) -> Result<(DdpgAgent, LearningCurve)> {
    train_with_progress(episodes, config, |_, _| {})
}

/// [`train`] with a callback receiving `(episode, return)`.
pub fn train_with_progress(
    episodes: usize,
    config: &DdpgConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<(DdpgAgent, LearningCurve)> {
    config.validate()?;
    let mut init_rng = rng::derived(config.seed, 0);
    let mut agent = DdpgAgent::new(config, &mut init_rng)?;
    let mut explore_rng = rng::derived(config.seed, 1);
    let mut reset_rng = rng::derived(config.seed, 2);
    let mut buffer = ReplayBuffer::new(config.buffer_capacity)?;
    let params = EnvParams::default();
    let mut curve = LearningCurve::default();

    for ep in 0..episodes {
        let sigma = config.noise_sigma(ep, episodes);
        let mut state = env::random_state(&mut reset_rng);
        let mut ret = 0.0;
        for _ in 0..config.steps_per_episode {
            let x = state.observation();
            let u = agent.act_explore(&x, sigma, &mut explore_rng)?;
            let (next, cost) = env::step(&state, u, &params)?;
            buffer.push(Transition {
                x,
                u,
                cost,
                x_next: next.observation(),
            });
            ret -= cost;
            state = next;
            if buffer.len() >= config.batch_size {
                learn_step(&mut agent, &buffer, &mut explore_rng)
                    .map_err(|e| Error::Diverged(format!("episode {ep}: {e}")))?;
            }
        }
        progress(ep, ret);
        curve.returns.push(ret);
    }
    Ok((agent, curve))
}

fn learn_step(agent: &mut DdpgAgent, buffer: &ReplayBuffer, rng: &mut SimRng) -> Result<()> {
    let batch = buffer.sample(agent.config.batch_size, rng)?;
    agent.critic_update(&batch)?;
    agent.actor_update(&batch)?;
    agent.soft_update_targets()
}

/// Greedy-policy episode. Observation noise, when given, only perturbs what
/// the actor sees.
pub fn run_episode(
    agent: &DdpgAgent,
    init: PendulumState,
    steps: usize,
    noise: Option<(&ObservationNoise, u64)>,
    params: &EnvParams,
    record: &mut TrajectoryRecord,
) -> Result<()> {
    let mut noise_rng = rng::seeded(noise.map_or(0, |(_, s)| s));
    let mut state = init;
    for t in 0..steps {
        let clean = state.observation();
        let observed = match noise {
            Some((n, _)) => n.apply(&clean, &mut noise_rng),
            None => clean,
        };
        let u = params.clamp_torque(agent.act(&observed)?);
        let (next, cost) = env::step(&state, u, params)?;
        record.rows.push(TrajectoryRow {
            t,
            theta: state.theta,
            theta_dot: state.theta_dot,
            u,
            cost,
            energy: env::energy(&state, u),
            planned: None,
        });
        state = next;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
