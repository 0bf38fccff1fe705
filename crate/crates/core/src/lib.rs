//! Perimeter-defense game, expert labeller, and a permutation-invariant
//! policy network with quantized inter-agent messages.
//!
//! Defenders live on the unit circle and chase intruders that run for it.
//! [`expert`] solves the game centrally with a maximum matching; [`pin`]
//! learns to imitate it from local, field-of-view-limited observations plus
//! short broadcast messages.

pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod expert;
pub mod game;
pub mod manifest;
pub mod matching;
pub mod nn;
pub mod pin;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
