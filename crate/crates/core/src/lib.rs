//! Noncooperative power allocation over parallel Gaussian interference
//! channels: masked waterfilling best responses, Nash equilibria and their
//! classification, uniqueness conditions, Pareto comparisons, and a
//! matrix-valued oracle for the diagonal-precoding result.

pub mod channel;
pub mod equilibrium;
pub mod error;
pub mod matrix_oracle;
pub mod pareto;
pub mod rng;
pub mod uniqueness;
pub mod waterfill;

pub use channel::{build_game, ChannelSet, NormalizedGame};
pub use error::{GameError, Result};
