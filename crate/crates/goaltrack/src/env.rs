//! Episodic UAV-tracking environment.
//!
//! One episode is `n_ttis` TTIs. Per TTI the agent picks a joint action
//! (velocity command + repetition factor); the BS transmits it over the
//! fading link, and the UAV executes it from the moment it decodes — or
//! hovers for the whole TTI when every repetition attempt fails. The target
//! meanwhile follows a random-direction mobility model. The agent only
//! observes the target-minus-UAV position difference; channel realisations
//! stay hidden.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::repetition::{run_tti_transmission, RepetitionConfig, TtiOutcome};
use crate::world::{
    advance_target, distance, resample_heading, step_uav, value, Position3,
    TargetTrajectoryState, ValueParams, VelocityCommand,
};
use crate::{derive_seed, Error, Result};

/// Observation fed to the controller: target-minus-UAV position difference
/// at the TTI start (metres).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateVec {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl StateVec {
    pub fn new(dx: f64, dy: f64, dz: f64) -> Self {
        Self { dx, dy, dz }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.dx, self.dy, self.dz]
    }
}

/// Joint action: velocity command plus per-TTI repetition factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub k_max: u32,
}

/// The discrete action grid, enumerated lexicographically by
/// `(v_x, v_y, v_z, k_max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    grid_x: Vec<f64>,
    grid_y: Vec<f64>,
    grid_z: Vec<f64>,
    k_choices: Vec<u32>,
}

impl ActionSpace {
    pub fn new(grid_x: Vec<f64>, grid_y: Vec<f64>, grid_z: Vec<f64>, k_choices: Vec<u32>) -> Self {
        Self {
            grid_x,
            grid_y,
            grid_z,
            k_choices,
        }
    }

    pub fn len(&self) -> usize {
        self.grid_x.len() * self.grid_y.len() * self.grid_z.len() * self.k_choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Action at `index`, or `None` past the end.
    pub fn action(&self, index: usize) -> Option<Action> {
        if index >= self.len() {
            return None;
        }
        let nk = self.k_choices.len();
        let nz = self.grid_z.len();
        let ny = self.grid_y.len();
        let ik = index % nk;
        let iz = (index / nk) % nz;
        let iy = (index / (nk * nz)) % ny;
        let ix = index / (nk * nz * ny);
        Some(Action {
            vx: self.grid_x[ix],
            vy: self.grid_y[iy],
            vz: self.grid_z[iz],
            k_max: self.k_choices[ik],
        })
    }

    /// Index of `action`, or `None` when any component is off-grid.
    pub fn index_of(&self, action: &Action) -> Option<usize> {
        let ix = self.grid_x.iter().position(|&v| v == action.vx)?;
        let iy = self.grid_y.iter().position(|&v| v == action.vy)?;
        let iz = self.grid_z.iter().position(|&v| v == action.vz)?;
        let ik = self.k_choices.iter().position(|&k| k == action.k_max)?;
        Some(((ix * self.grid_y.len() + iy) * self.grid_z.len() + iz) * self.k_choices.len() + ik)
    }

    pub fn grid_x(&self) -> &[f64] {
        &self.grid_x
    }

    pub fn grid_y(&self) -> &[f64] {
        &self.grid_y
    }

    pub fn grid_z(&self) -> &[f64] {
        &self.grid_z
    }

    pub fn k_choices(&self) -> &[u32] {
        &self.k_choices
    }
}

fn default_velocity_grid_xy() -> Vec<f64> {
    (-4..=4).map(|i| i as f64 * 500.0).collect()
}

fn default_velocity_grid_z() -> Vec<f64> {
    vec![0.0]
}

fn default_k_max_choices() -> Vec<u32> {
    (1..=10).collect()
}

fn default_uav_start() -> Position3 {
    Position3::new(69.0, 70.0, 50.0)
}

fn default_target_start() -> Position3 {
    Position3::new(70.0, 70.0, 50.0)
}

fn default_bs_position() -> Position3 {
    Position3::new(0.0, 0.0, 0.0)
}

fn default_experiment_channel() -> ChannelParams {
    // The stock exponent of 2 leaves the default geometry ~34 dB above the
    // decode threshold, where repetition is never exercised; 2.5 puts the
    // per-attempt success around 0.8 at the initial range.
    ChannelParams {
        path_loss_exponent: 2.5,
        ..Default::default()
    }
}

/// Full environment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// TTI length `T` (seconds).
    pub tti_len_s: f64,
    /// Episode length `N` (TTIs).
    pub n_ttis: usize,
    /// Number of uniform distance samples per TTI.
    pub sub_steps: usize,
    pub uav_start: Position3,
    pub target_start: Position3,
    pub bs_position: Position3,
    pub value: ValueParams,
    pub channel: ChannelParams,
    pub repetition: RepetitionConfig,
    /// Target ground speed (m/s).
    pub target_speed_m_s: f64,
    /// Per-TTI heading perturbation bound (radians).
    pub target_max_turn_rad: f64,
    /// Heading before the first TTI's perturbation (radians).
    pub target_initial_heading_rad: f64,
    pub velocity_grid_x: Vec<f64>,
    pub velocity_grid_y: Vec<f64>,
    pub velocity_grid_z: Vec<f64>,
    pub k_max_choices: Vec<u32>,
    /// Radius of the UAV's nominal navigation disk (metres); descriptive
    /// only, positions are never clamped to it.
    pub region_radius_m: f64,
    /// Height of the UAV's nominal navigation disk (metres); descriptive
    /// only.
    pub region_height_m: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            tti_len_s: 1e-3,
            n_ttis: 100,
            sub_steps: 10,
            uav_start: default_uav_start(),
            target_start: default_target_start(),
            bs_position: default_bs_position(),
            value: ValueParams::default(),
            channel: default_experiment_channel(),
            repetition: RepetitionConfig::default(),
            target_speed_m_s: 1000.0,
            target_max_turn_rad: std::f64::consts::FRAC_PI_4,
            target_initial_heading_rad: 0.0,
            velocity_grid_x: default_velocity_grid_xy(),
            velocity_grid_y: default_velocity_grid_xy(),
            velocity_grid_z: default_velocity_grid_z(),
            k_max_choices: default_k_max_choices(),
            region_radius_m: 500.0,
            region_height_m: 50.0,
        }
    }
}

impl EnvConfig {
    /// Enumerates the discrete action grid.
    pub fn action_space(&self) -> ActionSpace {
        ActionSpace::new(
            self.velocity_grid_x.clone(),
            self.velocity_grid_y.clone(),
            self.velocity_grid_z.clone(),
            self.k_max_choices.clone(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tti_len_s.is_finite() && self.tti_len_s > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tti_len_s must be positive, got {}",
                self.tti_len_s
            )));
        }
        if self.n_ttis == 0 {
            return Err(Error::InvalidConfig("n_ttis must be at least 1".into()));
        }
        if self.sub_steps == 0 {
            return Err(Error::InvalidConfig("sub_steps must be at least 1".into()));
        }
        self.uav_start.validate("uav_start")?;
        self.target_start.validate("target_start")?;
        self.bs_position.validate("bs_position")?;
        if !(self.target_speed_m_s.is_finite() && self.target_speed_m_s >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "target_speed_m_s must be non-negative, got {}",
                self.target_speed_m_s
            )));
        }
        if !(self.target_max_turn_rad.is_finite() && self.target_max_turn_rad >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "target_max_turn_rad must be non-negative, got {}",
                self.target_max_turn_rad
            )));
        }
        for (name, grid) in [
            ("velocity_grid_x", &self.velocity_grid_x),
            ("velocity_grid_y", &self.velocity_grid_y),
            ("velocity_grid_z", &self.velocity_grid_z),
        ] {
            if grid.is_empty() {
                return Err(Error::InvalidConfig(format!("{name} must be non-empty")));
            }
            if grid.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} contains non-finite entries"
                )));
            }
        }
        if self.k_max_choices.is_empty() {
            return Err(Error::InvalidConfig("k_max_choices must be non-empty".into()));
        }
        if let Some(&bad) = self
            .k_max_choices
            .iter()
            .find(|&&k| k == 0 || k > self.repetition.k_cap)
        {
            return Err(Error::InvalidConfig(format!(
                "k_max_choices entry {bad} outside [1, k_cap = {}]",
                self.repetition.k_cap
            )));
        }
        self.channel.validate()?;
        self.repetition.validate()?;
        Ok(())
    }
}

/// Per-TTI diagnostics attached to a step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    /// Outcome of the repetition burst.
    pub outcome: TtiOutcome,
    /// UAV-target distance at the TTI end (metres).
    pub d_n: f64,
    /// Goal values at the uniform sub-step timestamps.
    pub sub_values: Vec<f64>,
}

/// Result of advancing the environment by one TTI.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: StateVec,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Minimal episodic-environment interface the trainer runs against.
pub trait Environment {
    /// Starts a fresh episode seeded by `seed` and returns the first
    /// observation.
    fn reset(&mut self, seed: u64) -> StateVec;
    /// Advances one step with the action at `index`; returns
    /// `(next_state, reward, done)`.
    fn step_index(&mut self, index: usize) -> Result<(StateVec, f64, bool)>;
    /// Size of the discrete action space.
    fn n_actions(&self) -> usize;
}

const STREAM_CHANNEL: u64 = 0x43;
const STREAM_TARGET: u64 = 0x54;

/// The UAV-tracking environment.
#[derive(Debug, Clone)]
pub struct UavEnv {
    cfg: EnvConfig,
    space: ActionSpace,
    uav: Position3,
    target: TargetTrajectoryState,
    completed_ttis: usize,
    channel_rng: ChaCha8Rng,
    target_rng: ChaCha8Rng,
}

impl UavEnv {
    /// Builds a freshly seeded environment and returns it with the first
    /// observation.
    pub fn reset(cfg: EnvConfig, seed: u64) -> Result<(Self, StateVec)> {
        cfg.validate()?;
        let space = cfg.action_space();
        let mut env = Self {
            uav: cfg.uav_start,
            target: TargetTrajectoryState {
                position: cfg.target_start,
                heading: cfg.target_initial_heading_rad,
                speed: cfg.target_speed_m_s,
            },
            completed_ttis: 0,
            channel_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_CHANNEL)),
            target_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_TARGET)),
            space,
            cfg,
        };
        let state = env.restart(seed);
        Ok((env, state))
    }

    /// Restarts the episode in place with a new seed.
    pub fn restart(&mut self, seed: u64) -> StateVec {
        self.uav = self.cfg.uav_start;
        self.target = TargetTrajectoryState {
            position: self.cfg.target_start,
            heading: self.cfg.target_initial_heading_rad,
            speed: self.cfg.target_speed_m_s,
        };
        self.completed_ttis = 0;
        self.channel_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_CHANNEL));
        self.target_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_TARGET));
        self.state()
    }

    /// Current observation (target minus UAV).
    pub fn state(&self) -> StateVec {
        StateVec::new(
            self.target.position.x - self.uav.x,
            self.target.position.y - self.uav.y,
            self.target.position.z - self.uav.z,
        )
    }

    pub fn uav_position(&self) -> Position3 {
        self.uav
    }

    pub fn target_position(&self) -> Position3 {
        self.target.position
    }

    /// Number of TTIs completed so far this episode.
    pub fn tti_index(&self) -> usize {
        self.completed_ttis
    }

    pub fn done(&self) -> bool {
        self.completed_ttis >= self.cfg.n_ttis
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.space
    }

    /// Uniform sample offsets within a TTI: `T*l/L` for `l = 1..=L`. The
    /// last offset is exactly `T`.
    pub fn substep_offsets(tti_len_s: f64, sub_steps: usize) -> Vec<f64> {
        (1..=sub_steps)
            .map(|l| tti_len_s * l as f64 / sub_steps as f64)
            .collect()
    }

    /// Advances one TTI under `action`.
    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.done() {
            return Err(Error::EpisodeFinished);
        }
        if self.space.index_of(action).is_none() {
            return Err(Error::ShapeMismatch(format!(
                "action ({}, {}, {}, {}) is not on the configured grids",
                action.vx, action.vy, action.vz, action.k_max
            )));
        }
        let t = self.cfg.tti_len_s;

        // command transmission happens first; the UAV cannot act before the
        // command decodes
        let outcome = run_tti_transmission(
            action.k_max,
            &self.uav,
            &self.cfg.bs_position,
            &self.cfg.channel,
            &self.cfg.repetition,
            t,
            &mut self.channel_rng,
        )?;

        // the target turns once at the TTI boundary, then flies straight
        let target_start = resample_heading(
            &self.target,
            self.cfg.target_max_turn_rad,
            &mut self.target_rng,
        );

        let cmd = VelocityCommand {
            vx: action.vx,
            vy: action.vy,
            vz: action.vz,
            exec_duration: t,
        };
        let uav_at = |offset: f64| -> Position3 {
            match outcome.decode_offset_s {
                Some(t_d) if offset > t_d => step_uav(&self.uav, &cmd, offset - t_d),
                _ => self.uav,
            }
        };
        let target_at = |offset: f64| -> Position3 { advance_target(&target_start, offset).position };

        let mut sub_values = Vec::with_capacity(self.cfg.sub_steps);
        let mut d_n = 0.0;
        for offset in Self::substep_offsets(t, self.cfg.sub_steps) {
            let d = distance(&uav_at(offset), &target_at(offset));
            sub_values.push(value(d, &self.cfg.value));
            d_n = d;
        }

        self.uav = uav_at(t);
        self.target = advance_target(&target_start, t);
        self.completed_ttis += 1;

        let reward = value(d_n, &self.cfg.value);
        Ok(StepResult {
            next_state: self.state(),
            reward,
            done: self.done(),
            info: StepInfo {
                outcome,
                d_n,
                sub_values,
            },
        })
    }
}

impl Environment for UavEnv {
    fn reset(&mut self, seed: u64) -> StateVec {
        self.restart(seed)
    }

    fn step_index(&mut self, index: usize) -> Result<(StateVec, f64, bool)> {
        let action = self.space.action(index).ok_or_else(|| {
            Error::ShapeMismatch(format!(
                "action index {index} out of range 0..{}",
                self.space.len()
            ))
        })?;
        let res = self.step(&action)?;
        Ok((res.next_state, res.reward, res.done))
    }

    fn n_actions(&self) -> usize {
        self.space.len()
    }
}
