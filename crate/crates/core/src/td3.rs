//! Twin delayed deep deterministic policy gradient.
//!
//! The agent works entirely in raw action space `[-1, 1]^D`; decoding into
//! physical set-points is the environment's job.

use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, Environment};
use crate::nn::{adam_step, polyak_update, Activation, AdamConfig, AdamState, Mlp, NnError};

pub const CHECKPOINT_FORMAT: &str = "messrl-td3";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum Td3Error {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("invalid transition: {0}")]
    Transition(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

fn d_gamma() -> f64 {
    0.99
}
fn d_tau() -> f64 {
    0.005
}
fn d_explore() -> f64 {
    0.1
}
fn d_target_noise() -> f64 {
    0.2
}
fn d_clip() -> f64 {
    0.5
}
fn d_delay() -> usize {
    2
}
fn d_batch() -> usize {
    256
}
fn d_capacity() -> usize {
    100_000
}
fn d_warmup() -> usize {
    300
}
fn d_lr() -> f64 {
    3e-4
}
fn d_hidden() -> Vec<usize> {
    vec![256, 256]
}
fn d_seed() -> u64 {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Td3Hyper {
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_tau")]
    pub tau: f64,
    /// Std of Gaussian exploration noise, in raw action units.
    #[serde(default = "d_explore")]
    pub exploration_noise: f64,
    /// Std of target policy smoothing noise.
    #[serde(default = "d_target_noise")]
    pub target_noise: f64,
    #[serde(default = "d_clip")]
    pub noise_clip: f64,
    /// Critic updates per actor update.
    #[serde(default = "d_delay")]
    pub policy_delay: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_capacity")]
    pub buffer_capacity: usize,
    /// Episodes of uniformly random actions before learning starts.
    #[serde(default = "d_warmup")]
    pub warmup_episodes: usize,
    #[serde(default = "d_lr")]
    pub actor_lr: f64,
    #[serde(default = "d_lr")]
    pub critic_lr: f64,
    /// Hidden layer widths shared by actor and critics.
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    /// Seed for network initialisation, exploration and replay sampling.
    #[serde(default = "d_seed")]
    pub agent_seed: u64,
}

impl Default for Td3Hyper {
    fn default() -> Self {
        Td3Hyper {
            gamma: d_gamma(),
            tau: d_tau(),
            exploration_noise: d_explore(),
            target_noise: d_target_noise(),
            noise_clip: d_clip(),
            policy_delay: d_delay(),
            batch_size: d_batch(),
            buffer_capacity: d_capacity(),
            warmup_episodes: d_warmup(),
            actor_lr: d_lr(),
            critic_lr: d_lr(),
            hidden: d_hidden(),
            agent_seed: d_seed(),
        }
    }
}

impl Td3Hyper {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(format!("tau {} outside (0, 1]", self.tau));
        }
        if !(self.noise_clip > 0.0) {
            return Err("noise_clip must be positive".into());
        }
        if !(self.exploration_noise >= 0.0 && self.target_noise >= 0.0) {
            return Err("noise std must be non-negative".into());
        }
        if self.policy_delay == 0 {
            return Err("policy_delay must be at least 1".into());
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err("need 0 < batch_size <= buffer_capacity".into());
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err("learning rates must be positive".into());
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err("hidden widths must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

impl Transition {
    pub fn validate(&self) -> Result<(), Td3Error> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !(finite(&self.obs) && finite(&self.next_obs) && self.reward.is_finite()) {
            return Err(Td3Error::Transition("non-finite component".into()));
        }
        if self.action.iter().any(|a| !(-1.0..=1.0).contains(a)) {
            return Err(Td3Error::Transition("action outside [-1, 1]".into()));
        }
        Ok(())
    }
}

/// Column-stacked sample of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub action: Array2<f64>,
    pub reward: Array1<f64>,
    pub next_obs: Array2<f64>,
    /// 1.0 for terminal transitions.
    pub done: Array1<f64>,
}

impl Batch {
    pub fn from_transitions(items: &[&Transition]) -> Self {
        let n = items.len();
        let od = items.first().map(|t| t.obs.len()).unwrap_or(0);
        let ad = items.first().map(|t| t.action.len()).unwrap_or(0);
        let mut b = Batch {
            obs: Array2::zeros((n, od)),
            action: Array2::zeros((n, ad)),
            reward: Array1::zeros(n),
            next_obs: Array2::zeros((n, od)),
            done: Array1::zeros(n),
        };
        for (i, t) in items.iter().enumerate() {
            b.obs.row_mut(i).assign(&ArrayView1::from(&t.obs[..]));
            b.action.row_mut(i).assign(&ArrayView1::from(&t.action[..]));
            b.next_obs.row_mut(i).assign(&ArrayView1::from(&t.next_obs[..]));
            b.reward[i] = t.reward;
            b.done[i] = if t.done { 1.0 } else { 0.0 };
        }
        b
    }

    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }
}

/// Bounded FIFO of transitions with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Slot the next push overwrites once full.
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) -> Result<(), Td3Error> {
        t.validate()?;
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    /// Indices into the current contents, drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Batch {
        let idx = self.sample_indices(rng, n);
        let refs: Vec<&Transition> = idx.iter().map(|&i| &self.items[i]).collect();
        Batch::from_transitions(&refs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    /// Uniform on `[-1, 1]^D`, ignoring the actor.
    Warmup,
    /// Actor output plus clipped Gaussian noise.
    Explore,
    Greedy,
}

/// Smoothed target action: `clip(pi + clip(noise, -c, c), -1, 1)`.
pub fn smooth_target_action(pi: ArrayView2<f64>, noise: ArrayView2<f64>, clip: f64) -> Array2<f64> {
    let mut a = pi.to_owned();
    a.zip_mut_with(&noise, |a, &e| *a = (*a + e.clamp(-clip, clip)).clamp(-1.0, 1.0));
    a
}

/// `y = r + gamma (1 - done) min(q1, q2)`.
pub fn clipped_target(
    reward: ArrayView1<f64>,
    done: ArrayView1<f64>,
    q1: ArrayView1<f64>,
    q2: ArrayView1<f64>,
    gamma: f64,
) -> Array1<f64> {
    let mut y = Array1::zeros(reward.len());
    for i in 0..y.len() {
        let bootstrap = if done[i] != 0.0 { 0.0 } else { gamma * q1[i].min(q2[i]) };
        y[i] = reward[i] + bootstrap;
    }
    y
}

fn critic_input(obs: ArrayView2<f64>, action: ArrayView2<f64>) -> Array2<f64> {
    concatenate![Axis(1), obs, action]
}

/// Intermediate quantities of one target computation.
#[derive(Debug, Clone)]
pub struct TargetDetail {
    pub target_policy: Array2<f64>,
    pub smoothed_action: Array2<f64>,
    pub q1: Array1<f64>,
    pub q2: Array1<f64>,
    pub y: Array1<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_loss: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Agent {
    format: String,
    version: u32,
    pub hyper: Td3Hyper,
    obs_dim: usize,
    act_dim: usize,
    actor: Mlp,
    actor_target: Mlp,
    critic1: Mlp,
    critic2: Mlp,
    critic1_target: Mlp,
    critic2_target: Mlp,
    actor_opt: AdamState,
    critic1_opt: AdamState,
    critic2_opt: AdamState,
    critic_updates: u64,
    actor_updates: u64,
    /// Exploration and warmup noise.
    explore_rng: ChaCha8Rng,
    /// Replay sampling and target smoothing noise.
    update_rng: ChaCha8Rng,
    /// Episodes completed; used to resume training.
    pub episodes_done: usize,
}

impl Agent {
    pub fn new(obs_dim: usize, act_dim: usize, hyper: Td3Hyper) -> Self {
        let mut init = ChaCha8Rng::seed_from_u64(hyper.agent_seed);
        let sizes = |input: usize, output: usize| {
            let mut s = vec![input];
            s.extend(&hyper.hidden);
            s.push(output);
            s
        };
        let actor_sizes = sizes(obs_dim, act_dim);
        let critic_sizes = sizes(obs_dim + act_dim, 1);
        let actor = Mlp::new(&actor_sizes, Activation::Relu, Activation::Tanh, &mut init);
        let critic1 = Mlp::new(&critic_sizes, Activation::Relu, Activation::Identity, &mut init);
        let critic2 = Mlp::new(&critic_sizes, Activation::Relu, Activation::Identity, &mut init);
        let adam = |lr| AdamConfig {
            learning_rate: lr,
            ..AdamConfig::default()
        };
        Agent {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            obs_dim,
            act_dim,
            actor_opt: AdamState::new(&actor, adam(hyper.actor_lr)),
            critic1_opt: AdamState::new(&critic1, adam(hyper.critic_lr)),
            critic2_opt: AdamState::new(&critic2, adam(hyper.critic_lr)),
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            critic_updates: 0,
            actor_updates: 0,
            explore_rng: ChaCha8Rng::seed_from_u64(hyper.agent_seed.wrapping_add(1)),
            update_rng: ChaCha8Rng::seed_from_u64(hyper.agent_seed.wrapping_add(2)),
            episodes_done: 0,
            hyper,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    pub fn actor_updates(&self) -> u64 {
        self.actor_updates
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn critics(&self) -> (&Mlp, &Mlp) {
        (&self.critic1, &self.critic2)
    }

    pub fn targets(&self) -> (&Mlp, &Mlp, &Mlp) {
        (&self.actor_target, &self.critic1_target, &self.critic2_target)
    }

    /// Direct access for tests and tooling that install hand-built networks.
    pub fn networks_mut(&mut self) -> [&mut Mlp; 6] {
        [
            &mut self.actor,
            &mut self.critic1,
            &mut self.critic2,
            &mut self.actor_target,
            &mut self.critic1_target,
            &mut self.critic2_target,
        ]
    }

    /// Re-seeds the replay/target-noise stream.
    pub fn update_rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.update_rng
    }

    pub fn greedy(&self, obs: &[f64]) -> Result<Vec<f64>, Td3Error> {
        Ok(self.actor.forward(ArrayView1::from(obs))?.to_vec())
    }

    pub fn select_action(&mut self, obs: &[f64], mode: ActionMode) -> Result<Vec<f64>, Td3Error> {
        match mode {
            ActionMode::Warmup => Ok((0..self.act_dim)
                .map(|_| self.explore_rng.random_range(-1.0..=1.0))
                .collect()),
            ActionMode::Greedy => self.greedy(obs),
            ActionMode::Explore => {
                let mut a = self.greedy(obs)?;
                let sigma = self.hyper.exploration_noise;
                for v in &mut a {
                    let z: f64 = self.explore_rng.sample(StandardNormal);
                    *v = (*v + sigma * z).clamp(-1.0, 1.0);
                }
                Ok(a)
            }
        }
    }

    /// Targets for a batch, drawing smoothing noise from the agent's stream.
    pub fn compute_target(&mut self, batch: &Batch) -> Result<TargetDetail, Td3Error> {
        let noise = Array2::from_shape_simple_fn((batch.len(), self.act_dim), || {
            let z: f64 = self.update_rng.sample(StandardNormal);
            self.hyper.target_noise * z
        });
        self.compute_target_with_noise(batch, noise.view())
    }

    pub fn compute_target_with_noise(
        &self,
        batch: &Batch,
        noise: ArrayView2<f64>,
    ) -> Result<TargetDetail, Td3Error> {
        let target_policy = self.actor_target.forward_batch(batch.next_obs.view())?;
        let smoothed_action = smooth_target_action(target_policy.view(), noise, self.hyper.noise_clip);
        let x = critic_input(batch.next_obs.view(), smoothed_action.view());
        let q1 = self.critic1_target.forward_batch(x.view())?.column(0).to_owned();
        let q2 = self.critic2_target.forward_batch(x.view())?.column(0).to_owned();
        let y = clipped_target(batch.reward.view(), batch.done.view(), q1.view(), q2.view(), self.hyper.gamma);
        Ok(TargetDetail {
            target_policy,
            smoothed_action,
            q1,
            q2,
            y,
        })
    }

    /// One Adam step on each critic toward `y`. Returns the losses measured
    /// before the step.
    pub fn critic_update(&mut self, batch: &Batch, y: ArrayView1<f64>) -> Result<(f64, f64), Td3Error> {
        let x = critic_input(batch.obs.view(), batch.action.view());
        let n = batch.len() as f64;
        let mut losses = [0.0; 2];
        let nets = [
            (&mut self.critic1, &mut self.critic1_opt),
            (&mut self.critic2, &mut self.critic2_opt),
        ];
        for (k, (net, opt)) in nets.into_iter().enumerate() {
            let trace = net.forward_trace(x.view())?;
            let q = trace.output().column(0);
            let err = &q - &y;
            let loss = err.mapv(|e| e * e).sum() / n;
            if !loss.is_finite() {
                return Err(Td3Error::Divergence(format!(
                    "critic {} loss is {loss} after {} updates",
                    k + 1,
                    self.critic_updates
                )));
            }
            losses[k] = loss;
            let grad = err.mapv(|e| 2.0 * e / n).insert_axis(Axis(1));
            let (g, _) = net.backward(&trace, grad.view())?;
            adam_step(net, &g, opt).map_err(|e| Td3Error::Divergence(e.to_string()))?;
        }
        self.critic_updates += 1;
        Ok((losses[0], losses[1]))
    }

    /// Deterministic policy gradient step through critic 1, followed by the
    /// Polyak update of all target networks. Returns `-mean Q` before the step.
    pub fn actor_update(&mut self, batch: &Batch) -> Result<f64, Td3Error> {
        let n = batch.len() as f64;
        let a_trace = self.actor.forward_trace(batch.obs.view())?;
        let x = critic_input(batch.obs.view(), a_trace.output().view());
        let q_trace = self.critic1.forward_trace(x.view())?;
        let loss = -q_trace.output().sum() / n;
        if !loss.is_finite() {
            return Err(Td3Error::Divergence(format!(
                "actor loss is {loss} after {} updates",
                self.actor_updates
            )));
        }
        let upstream = Array2::from_elem((batch.len(), 1), -1.0 / n);
        let (_, dx) = self.critic1.backward(&q_trace, upstream.view())?;
        let da = dx.slice(s![.., self.obs_dim..]).to_owned();
        let (g, _) = self.actor.backward(&a_trace, da.view())?;
        adam_step(&mut self.actor, &g, &mut self.actor_opt)
            .map_err(|e| Td3Error::Divergence(e.to_string()))?;
        let tau = self.hyper.tau;
        polyak_update(&mut self.actor_target, &self.actor, tau)?;
        polyak_update(&mut self.critic1_target, &self.critic1, tau)?;
        polyak_update(&mut self.critic2_target, &self.critic2, tau)?;
        self.actor_updates += 1;
        Ok(loss)
    }

    /// One critic update, plus an actor/target update every `policy_delay`
    /// critic updates.
    pub fn update(&mut self, batch: &Batch) -> Result<UpdateReport, Td3Error> {
        let target = self.compute_target(batch)?;
        let (critic1_loss, critic2_loss) = self.critic_update(batch, target.y.view())?;
        let actor_loss = if self.critic_updates % self.hyper.policy_delay as u64 == 0 {
            Some(self.actor_update(batch)?)
        } else {
            None
        };
        Ok(UpdateReport {
            critic1_loss,
            critic2_loss,
            actor_loss,
        })
    }

    pub fn update_from(&mut self, buffer: &ReplayBuffer) -> Result<Option<UpdateReport>, Td3Error> {
        if buffer.len() < self.hyper.batch_size {
            return Ok(None);
        }
        let batch = buffer.sample(&mut self.update_rng, self.hyper.batch_size);
        self.update(&batch).map(Some)
    }

    pub fn to_json(&self) -> Result<String, Td3Error> {
        serde_json::to_string(self).map_err(|e| Td3Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, Td3Error> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let header: Header =
            serde_json::from_str(text).map_err(|e| Td3Error::Checkpoint(e.to_string()))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Td3Error::Checkpoint(format!("unknown format {:?}", header.format)));
        }
        if header.version != CHECKPOINT_VERSION {
            return Err(Td3Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                header.version
            )));
        }
        let agent: Agent =
            serde_json::from_str(text).map_err(|e| Td3Error::Checkpoint(e.to_string()))?;
        agent.check_consistency()?;
        Ok(agent)
    }

    fn check_consistency(&self) -> Result<(), Td3Error> {
        let mut actor = vec![self.obs_dim];
        actor.extend(&self.hyper.hidden);
        actor.push(self.act_dim);
        let mut critic = vec![self.obs_dim + self.act_dim];
        critic.extend(&self.hyper.hidden);
        critic.push(1);
        let ok = self.actor.sizes() == actor
            && self.actor_target.sizes() == actor
            && [&self.critic1, &self.critic2, &self.critic1_target, &self.critic2_target]
                .iter()
                .all(|c| c.sizes() == critic);
        if !ok {
            return Err(Td3Error::Checkpoint("network shapes disagree with header".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), Td3Error> {
        let io = |source| Td3Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json()?).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, Td3Error> {
        let text = std::fs::read_to_string(path).map_err(|source| Td3Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Loads a checkpoint and rejects it unless it matches the expected
    /// dimensions and hidden widths.
    pub fn load_matching(path: &Path, obs_dim: usize, act_dim: usize, hidden: &[usize]) -> Result<Self, Td3Error> {
        let agent = Self::load(path)?;
        if agent.obs_dim != obs_dim || agent.act_dim != act_dim || agent.hyper.hidden != hidden {
            return Err(Td3Error::Checkpoint(format!(
                "architecture mismatch: checkpoint obs {} act {} hidden {:?}, expected obs {obs_dim} act {act_dim} hidden {hidden:?}",
                agent.obs_dim, agent.act_dim, agent.hyper.hidden
            )));
        }
        Ok(agent)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub episode_return: f64,
    pub updates: usize,
    pub actor_updates: usize,
    /// Mean pre-update losses over the episode's updates.
    pub critic1_loss: Option<f64>,
    pub critic2_loss: Option<f64>,
    pub actor_loss: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Rolls one episode with exploration, storing transitions and updating the
/// agent once per step after warmup.
pub fn train_episode(
    env: &mut Environment,
    agent: &mut Agent,
    buffer: &mut ReplayBuffer,
    env_seed: u64,
) -> Result<EpisodeReport, Td3Error> {
    let warm = agent.episodes_done < agent.hyper.warmup_episodes;
    let mode = if warm { ActionMode::Warmup } else { ActionMode::Explore };
    let mut obs = env.reset(env_seed);
    let mut total = 0.0;
    let (mut l1, mut l2, mut la) = (Vec::new(), Vec::new(), Vec::new());
    loop {
        let action = agent.select_action(obs.as_slice(), mode)?;
        let out = env.step_raw(&action)?;
        total += out.reward;
        buffer.push(Transition {
            obs: obs.0,
            action,
            reward: out.reward,
            next_obs: out.observation.0.clone(),
            done: out.done,
        })?;
        if !warm {
            if let Some(r) = agent.update_from(buffer)? {
                l1.push(r.critic1_loss);
                l2.push(r.critic2_loss);
                la.extend(r.actor_loss);
            }
        }
        obs = out.observation;
        if out.done {
            break;
        }
    }
    agent.episodes_done += 1;
    Ok(EpisodeReport {
        episode_return: total,
        updates: l1.len(),
        actor_updates: la.len(),
        critic1_loss: mean(&l1),
        critic2_loss: mean(&l2),
        actor_loss: mean(&la),
    })
}

/// Noise-free return of the actor on one episode.
pub fn evaluate_episode(env: &mut Environment, agent: &Agent, env_seed: u64) -> Result<f64, Td3Error> {
    let mut obs = env.reset(env_seed);
    let mut total = 0.0;
    loop {
        let out = env.step_raw(&agent.greedy(obs.as_slice())?)?;
        total += out.reward;
        obs = out.observation;
        if out.done {
            return Ok(total);
        }
    }
}
