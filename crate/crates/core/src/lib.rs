//! Sequential recommendation with self-supervised Q-learning (SQN) and
//! self-supervised actor-critic (SAC) training.
//!
//! A sequence encoder feeds two linear heads: a supervised head trained
//! with cross-entropy on the next interaction, and a Q head trained with
//! double Q-learning on rewards derived from clicks and purchases. The
//! supervised head ranks items at inference time.

pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod heads;
pub mod losses;
pub mod model;
pub mod nn;
pub mod rng;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
