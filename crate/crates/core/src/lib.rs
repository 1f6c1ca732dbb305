//! Goal-masking curriculum for goal-conditioned DDPG+HER on kinematic
//! manipulation tasks.
//!
//! A goal is a small vector of block coordinates. A binary mask selects which
//! of those coordinates must actually be reached; masked coordinates count as
//! achieved wherever the block currently is. Per-coordinate success rates from
//! evaluation rollouts give each mask a difficulty estimate, and training
//! episodes sample masks whose estimated success chance sits near a target
//! value, so the learner keeps working at the edge of its ability.

pub mod curriculum;
pub mod ddpg;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod replay;
pub mod rng;

pub use error::{Error, Result};
