//! Learning and baseline controllers.
//!
//! `Trainer` runs the DQN loop: epsilon-greedy rollouts feed a bounded
//! replay memory, minibatches drive TD updates against a periodically synced
//! target network. The PID baseline shares the same discrete action
//! interface so both controllers act through an identical channel.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ActionSpace, Action, EnvConfig, Environment, StateVec, UavEnv};
use crate::neuralnet::{
    argmax, rmsprop_step, td_loss_grad, OptimState, QNetParams, Transition,
};
use crate::world::Position3;
use crate::{derive_seed, Error, Result};

/// Bounded ring of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    buf: Vec<Transition>,
    capacity: usize,
    write: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            buf: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            write: 0,
        }
    }

    /// Stores a transition, evicting the oldest once full.
    pub fn push(&mut self, t: Transition) {
        if self.buf.len() < self.capacity {
            self.buf.push(t);
        } else {
            self.buf[self.write] = t;
        }
        self.write = (self.write + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Draws `batch` distinct transitions uniformly at random.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<Transition> {
        assert!(
            batch <= self.buf.len(),
            "batch {batch} exceeds stored transitions {}",
            self.buf.len()
        );
        rand::seq::index::sample(rng, self.buf.len(), batch)
            .into_iter()
            .map(|i| self.buf[i])
            .collect()
    }
}

/// Hyperparameters of the DQN training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of training episodes.
    pub n_iterations: usize,
    /// Target network sync period (episodes).
    pub target_sync_period: usize,
    pub batch_size: usize,
    /// Discount factor.
    pub gamma: f64,
    /// Exploration rate at episode 0.
    pub epsilon_start: f64,
    /// Exploration rate after the decay horizon.
    pub epsilon_end: f64,
    /// Episodes over which epsilon decays linearly.
    pub epsilon_decay_episodes: usize,
    /// RMSprop learning rate.
    pub learning_rate: f64,
    pub replay_capacity: usize,
    /// Hidden layer widths of the Q-network.
    pub hidden_sizes: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_iterations: 2000,
            target_sync_period: 10,
            batch_size: 32,
            gamma: 0.1,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: 1600,
            learning_rate: 1e-4,
            replay_capacity: 100_000,
            hidden_sizes: vec![128, 128],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 {
            return Err(Error::InvalidConfig("train.n_iterations must be at least 1".into()));
        }
        if self.target_sync_period == 0 {
            return Err(Error::InvalidConfig(
                "train.target_sync_period must be at least 1".into(),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train.gamma must be in (0, 1], got {}",
                self.gamma
            )));
        }
        for (name, e) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
        ] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::InvalidConfig(format!(
                    "train.{name} must be in [0, 1], got {e}"
                )));
            }
        }
        if self.epsilon_end > self.epsilon_start {
            return Err(Error::InvalidConfig(
                "train.epsilon_end must not exceed train.epsilon_start".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("train.batch_size must be at least 1".into()));
        }
        if self.batch_size > self.replay_capacity {
            return Err(Error::InvalidConfig(format!(
                "train.batch_size {} exceeds replay_capacity {}",
                self.batch_size, self.replay_capacity
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "train.learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::InvalidConfig(
                "train.hidden_sizes entries must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Exploration rate for a 0-based episode index: linear from
    /// `epsilon_start` to `epsilon_end` over the decay horizon, flat after.
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        if episode >= self.epsilon_decay_episodes || self.epsilon_decay_episodes == 0 {
            return self.epsilon_end;
        }
        let frac = episode as f64 / self.epsilon_decay_episodes as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    /// Q-network layer sizes for an action space of `n_actions`.
    pub fn layer_sizes(&self, n_actions: usize) -> Vec<usize> {
        let mut sizes = vec![3];
        sizes.extend_from_slice(&self.hidden_sizes);
        sizes.push(n_actions);
        sizes
    }
}

/// PID baseline parameters (proportional term only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidConfig {
    /// Proportional gain.
    pub kp: f64,
    /// Fixed per-TTI repetition factor.
    pub k_max: u32,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self { kp: 0.5, k_max: 1 }
    }
}

impl PidConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kp.is_finite() && self.kp > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "pid.kp must be positive, got {}",
                self.kp
            )));
        }
        if self.k_max == 0 {
            return Err(Error::InvalidConfig("pid.k_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Epsilon-greedy action selection over the Q-network's outputs.
///
/// Explores with probability `epsilon` (uniform over all actions);
/// otherwise picks the argmax, ties to the lowest index.
pub fn select_action<R: Rng + ?Sized>(
    qnet: &QNetParams,
    state: &StateVec,
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    debug_assert!((0.0..=1.0).contains(&epsilon), "epsilon = {epsilon}");
    let n = qnet.output_dim();
    if rng.random::<f64>() < epsilon {
        Ok(rng.random_range(0..n))
    } else {
        Ok(argmax(&qnet.forward(state)?))
    }
}

/// Snaps a raw value to the nearest grid member; exact ties go to the value
/// closer to zero.
fn snap_to_grid(target: f64, grid: &[f64]) -> f64 {
    debug_assert!(!grid.is_empty());
    let mut best = grid[0];
    for &g in &grid[1..] {
        let d = (g - target).abs();
        let bd = (best - target).abs();
        if d < bd || (d == bd && g.abs() < best.abs()) {
            best = g;
        }
    }
    best
}

/// Proportional controller: per-axis raw velocity `kp * error / T`, snapped
/// onto the discrete velocity grids, with the configured fixed repetition
/// factor.
pub fn pid_command(
    p_u: &Position3,
    p_tg: &Position3,
    pc: &PidConfig,
    tti_len_s: f64,
    space: &ActionSpace,
) -> Action {
    debug_assert!(tti_len_s > 0.0);
    let raw = |e: f64| pc.kp * e / tti_len_s;
    Action {
        vx: snap_to_grid(raw(p_tg.x - p_u.x), space.grid_x()),
        vy: snap_to_grid(raw(p_tg.y - p_u.y), space.grid_y()),
        vz: snap_to_grid(raw(p_tg.z - p_u.z), space.grid_z()),
        k_max: pc.k_max,
    }
}

/// A frozen controller mapping observations to action indices.
pub trait Policy {
    fn select(&self, state: &StateVec, space: &ActionSpace) -> Result<usize>;
}

/// Greedy policy over a trained Q-network (epsilon = 0).
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    net: QNetParams,
}

impl GreedyPolicy {
    pub fn new(net: QNetParams) -> Self {
        Self { net }
    }

    pub fn network(&self) -> &QNetParams {
        &self.net
    }
}

impl Policy for GreedyPolicy {
    fn select(&self, state: &StateVec, space: &ActionSpace) -> Result<usize> {
        if self.net.output_dim() != space.len() {
            return Err(Error::ShapeMismatch(format!(
                "network has {} outputs but the action space has {} actions",
                self.net.output_dim(),
                space.len()
            )));
        }
        Ok(argmax(&self.net.forward(state)?))
    }
}

/// PID baseline acting on the observed position difference.
#[derive(Debug, Clone, Copy)]
pub struct PidPolicy {
    pub cfg: PidConfig,
    pub tti_len_s: f64,
}

impl Policy for PidPolicy {
    fn select(&self, state: &StateVec, space: &ActionSpace) -> Result<usize> {
        let origin = Position3::new(0.0, 0.0, 0.0);
        let target = Position3::new(state.dx, state.dy, state.dz);
        let action = pid_command(&origin, &target, &self.cfg, self.tti_len_s, space);
        space.index_of(&action).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "pid.k_max = {} is not among the configured k_max_choices",
                self.cfg.k_max
            ))
        })
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub epsilon: f64,
    pub episode_return: f64,
    /// Exponential moving average of the TD loss (decay 0.99 per update);
    /// zero until the first update happens.
    pub loss_ma: f64,
}

/// Output of a training run.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub qnet: QNetParams,
    pub optim: OptimState,
    pub log: Vec<EpisodeLog>,
}

const STREAM_AGENT: u64 = 0x41;
const EPISODE_STREAM_BASE: u64 = 0x1000_0000;

/// The DQN training loop, driven one episode at a time.
#[derive(Debug, Clone)]
pub struct Trainer {
    tc: TrainConfig,
    theta: QNetParams,
    theta_star: QNetParams,
    opt: OptimState,
    replay: ReplayMemory,
    rng: ChaCha8Rng,
    episodes_done: usize,
    updates_done: usize,
    loss_ma: Option<f64>,
}

impl Trainer {
    pub fn new(tc: &TrainConfig, n_actions: usize) -> Result<Self> {
        tc.validate()?;
        if n_actions == 0 {
            return Err(Error::InvalidConfig("action space is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, STREAM_AGENT));
        let theta = QNetParams::new_seeded(&tc.layer_sizes(n_actions), &mut rng)?;
        let theta_star = theta.clone();
        let opt = OptimState::new(&theta, tc.learning_rate);
        Ok(Self {
            replay: ReplayMemory::new(tc.replay_capacity),
            tc: tc.clone(),
            theta,
            theta_star,
            opt,
            rng,
            episodes_done: 0,
            updates_done: 0,
            loss_ma: None,
        })
    }

    pub fn theta(&self) -> &QNetParams {
        &self.theta
    }

    pub fn theta_star(&self) -> &QNetParams {
        &self.theta_star
    }

    pub fn optim(&self) -> &OptimState {
        &self.opt
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn updates_done(&self) -> usize {
        self.updates_done
    }

    /// Runs one full episode: rollout, replay writes, TD updates, and the
    /// end-of-episode target sync when the period divides the episode count.
    pub fn run_episode<E: Environment>(&mut self, env: &mut E) -> Result<EpisodeLog> {
        let episode = self.episodes_done;
        let epsilon = self.tc.epsilon_at(episode);
        let mut state = env.reset(derive_seed(
            self.tc.seed,
            EPISODE_STREAM_BASE + episode as u64,
        ));
        let mut episode_return = 0.0;
        loop {
            let action = select_action(&self.theta, &state, epsilon, &mut self.rng)?;
            let (next_state, reward, done) = env.step_index(action)?;
            self.replay.push(Transition {
                state,
                action,
                reward,
                next_state,
                done,
            });
            if self.replay.len() >= self.tc.batch_size {
                let batch = self.replay.sample(self.tc.batch_size, &mut self.rng);
                let (loss, grads) =
                    td_loss_grad(&batch, &self.theta, &self.theta_star, self.tc.gamma)?;
                rmsprop_step(&mut self.theta, &grads, &mut self.opt);
                self.updates_done += 1;
                self.loss_ma = Some(match self.loss_ma {
                    Some(ma) => 0.99 * ma + 0.01 * loss,
                    None => loss,
                });
            }
            episode_return += reward;
            state = next_state;
            if done {
                break;
            }
        }
        self.episodes_done += 1;
        if self.episodes_done.is_multiple_of(self.tc.target_sync_period) {
            self.theta_star = self.theta.clone();
        }
        Ok(EpisodeLog {
            episode,
            epsilon,
            episode_return,
            loss_ma: self.loss_ma.unwrap_or(0.0),
        })
    }

    /// Consumes the trainer into its trained parameters.
    pub fn into_result(self, log: Vec<EpisodeLog>) -> TrainResult {
        TrainResult {
            qnet: self.theta,
            optim: self.opt,
            log,
        }
    }
}

/// Trains on an arbitrary environment for `tc.n_iterations` episodes.
pub fn train_on<E: Environment>(env: &mut E, tc: &TrainConfig) -> Result<TrainResult> {
    let mut trainer = Trainer::new(tc, env.n_actions())?;
    let mut log = Vec::with_capacity(tc.n_iterations);
    for _ in 0..tc.n_iterations {
        log.push(trainer.run_episode(env)?);
    }
    Ok(trainer.into_result(log))
}

/// Trains on the UAV-tracking environment.
pub fn train(cfg: &EnvConfig, tc: &TrainConfig) -> Result<TrainResult> {
    let (mut env, _) = UavEnv::reset(cfg.clone(), tc.seed)?;
    train_on(&mut env, tc)
}
