//! Micro-environments for studying when memoryful multi-agent policies beat
//! memoryless ones.
//!
//! The crate is organised as one module per environment family plus the
//! shared [`engine`]:
//!
//! - [`engine`]: simultaneous-move environment trait, memory-threading
//!   policies, seeded episode execution and Monte Carlo evaluation.
//! - [`rps`]: repeated rock-paper-scissors, payoff algebra and a
//!   count-based counter policy.
//! - [`colearn`]: exact simultaneous gradient dynamics on the RPS simplex.
//! - [`traffic`]: two-lane traffic gridworld with scripted opponents and an
//!   opponent-modelling ego policy.
//! - [`threelane`]: three-lane pursuit with behaviour-based signalling.
//! - [`speakermover`]: the speaker/mover token game, exact memoryless policy
//!   search and a history-dependent reference optimum.

pub mod colearn;
pub mod engine;
pub mod error;
pub mod rps;
pub mod speakermover;
pub mod threelane;
pub mod traffic;

pub use engine::{
    derive_seed, evaluate, run_episode, DynPolicy, Environment, Episode, EpisodeRng,
    EpisodeStats, EvalConfig, Policy, PolicyHandle, Step, Transition,
};
pub use error::{Error, Result};
pub use rps::{ActionDistribution3, CountMemory, RpsAction};
