//! Constrained black-box observation attacks against cooperative multi-agent teams.
//!
//! The crate is organised bottom-up:
//!
//! - [`numkit`]: dense matrices, a tanh MLP with exact reverse-mode gradients, Adam.
//! - [`env`]: a deterministic level-based foraging grid world.
//! - [`policy`]: the victims under attack (a scripted expert and its behaviour clone).
//! - [`attack`]: Align (reconstruction network + PGD), Hadamard, targeted Hadamard,
//!   random/OU noise baselines and the white-box baseline.
//! - [`eval`]: episode runner, IQM / bootstrap statistics and report writers.

pub mod attack;
pub mod env;
pub mod error;
pub mod eval;
pub mod io;
pub mod numkit;
pub mod policy;
pub mod seed;

pub use error::{Error, Result};
