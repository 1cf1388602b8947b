//! Goal-oriented downlink command-and-control simulation.
//!
//! A base station at the origin sends velocity commands to a UAV that is
//! trying to shadow a moving target. Each command is carried over a fading
//! air-to-ground link with proactive K-repetition; whether (and when, within
//! the 1 ms TTI) the command decodes determines how far the UAV actually
//! moves. Success is judged at goal level: the UAV only needs to stay within
//! a distance threshold of the target, not to receive every packet.
//!
//! The crate is organised bottom-up:
//!
//! - [`world`]: positions, kinematics, target mobility, and the goal value
//!   function.
//! - [`channel`]: air-to-ground link budget, LoS probability, Rayleigh
//!   fading, transmission delay, and the decode test.
//! - [`repetition`]: proactive K-repetition of a command within one TTI.
//! - [`env`]: the episodic tracking environment (state, action grid, step
//!   semantics, traces).
//! - [`neuralnet`]: a small fully-connected Q-network with hand-written
//!   forward, TD-loss gradients, RMSprop, and checkpointing.
//! - [`agents`]: replay memory, the DQN training loop, and the PID baseline.
//! - [`harness`]: experiment configuration, evaluation, threshold sweeps,
//!   and CSV output.

pub mod agents;
pub mod channel;
pub mod env;
pub mod harness;
pub mod neuralnet;
pub mod repetition;
pub mod world;

mod error;

pub use error::{Error, Result};

/// Derives an independent substream seed from a master seed.
///
/// Splitmix64 finalizer over `master + stream`; cheap, stateless, and good
/// enough to decorrelate the per-purpose RNG streams used across the crate.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
