//! World geometry, kinematics, and the goal value function.
//!
//! Everything here is deterministic given its inputs; the only randomness in
//! the world model is the target heading perturbation, which takes an
//! explicit RNG.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// 3-D position in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Position3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Validates the position for use as a world object (finite, above ground).
    pub fn validate(&self, what: &str) -> Result<()> {
        if !(self.x.is_finite() && self.y.is_finite() && self.z.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "{what} position has non-finite coordinates"
            )));
        }
        if self.z < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "{what} position has negative altitude z = {}",
                self.z
            )));
        }
        Ok(())
    }
}

/// Velocity command applied by the UAV for part of a TTI.
///
/// Components are in m/s; `exec_duration` is the window (seconds) the command
/// may be executed in, i.e. the TTI length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityCommand {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub exec_duration: f64,
}

/// Mobility state of the tracked target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetTrajectoryState {
    pub position: Position3,
    /// Heading in the x-y plane, radians.
    pub heading: f64,
    /// Ground speed in m/s.
    pub speed: f64,
}

/// Parameters of the goal value function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValueParams {
    /// Distance threshold `d_th` (metres) below which tracking counts as
    /// successful.
    pub d_th: f64,
}

impl Default for ValueParams {
    fn default() -> Self {
        Self { d_th: 2.0 }
    }
}

/// Euclidean distance between two positions (metres).
pub fn distance(a: &Position3, b: &Position3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Sign function with `sign(0) = 1`.
pub fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Goal value of a UAV-target distance `d` (metres).
///
/// Returns 1 when the UAV is within the threshold, and `exp(d_th - d) - 1`
/// (a value in (-1, 0)) when it is outside. The jump at `d_th` is
/// intentional: being inside the goal region is qualitatively different from
/// being near it.
pub fn value(d: f64, params: &ValueParams) -> f64 {
    if d <= params.d_th {
        1.0
    } else {
        (params.d_th - d).exp() - 1.0
    }
}

/// Advances the UAV by `cmd` for `dt` seconds.
///
/// `dt` must lie in `[0, cmd.exec_duration]`; movement is straight-line at
/// the commanded velocity.
pub fn step_uav(p: &Position3, cmd: &VelocityCommand, dt: f64) -> Position3 {
    debug_assert!(
        (0.0..=cmd.exec_duration).contains(&dt),
        "dt = {dt} outside [0, {}]",
        cmd.exec_duration
    );
    Position3 {
        x: p.x + cmd.vx * dt,
        y: p.y + cmd.vy * dt,
        z: p.z + cmd.vz * dt,
    }
}

/// Advances the target by `dt` seconds along its current heading.
///
/// The target moves in the x-y plane at constant speed; altitude never
/// changes. Heading is left untouched — see [`resample_heading`] for the
/// per-TTI turn.
pub fn advance_target(s: &TargetTrajectoryState, dt: f64) -> TargetTrajectoryState {
    TargetTrajectoryState {
        position: Position3 {
            x: s.position.x + s.speed * s.heading.cos() * dt,
            y: s.position.y + s.speed * s.heading.sin() * dt,
            z: s.position.z,
        },
        ..*s
    }
}

/// Draws the next heading uniformly within `±max_turn` radians of the
/// current one. Called once per TTI boundary.
pub fn resample_heading<R: Rng + ?Sized>(
    s: &TargetTrajectoryState,
    max_turn: f64,
    rng: &mut R,
) -> TargetTrajectoryState {
    let heading = if max_turn > 0.0 {
        rng.random_range(s.heading - max_turn..=s.heading + max_turn)
    } else {
        s.heading
    };
    TargetTrajectoryState { heading, ..*s }
}
