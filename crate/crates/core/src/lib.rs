//! Learning core for safe adversarially guided soft actor-critics.
//!
//! A maximum-entropy agent and a risk-seeking adversary are trained side by
//! side from one replay buffer. The adversary estimates risk with one of three
//! critics (constraint-cost, mean-standard-deviation or CVaR over quantiles),
//! and the agent's actor loss carries a repulsion term that pushes its policy
//! away from the adversary's. Everything here is pure computation on `alloc`
//! collections so the crate builds without `std`; file formats and the
//! command line live in the companion `saac` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adversary;
pub mod diagnostics;
pub mod envs;
mod error;
pub mod numerics;
pub mod oracle;
pub mod pca;
pub mod policy;
pub mod replay;
pub mod rng;
pub mod sac;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::Rng;
