use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("agent {agent} emitted an invalid action at step {step}")]
    InvalidAction { agent: usize, step: usize },

    #[error("expected {expected} policies, got {got}")]
    AgentCountMismatch { expected: usize, got: usize },

    #[error("{what} must be at least {min}, got {got}")]
    TooSmall {
        what: &'static str,
        min: usize,
        got: usize,
    },

    #[error("episode {episode} failed: {source}")]
    Episode {
        episode: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("not a probability distribution: {0:?}")]
    InvalidDistribution([f64; 3]),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("target {0} is not one of 11, 12, 13, 14")]
    UnknownTarget(u8),

    #[error("mover table has no entry for position {position} and token {token}")]
    MissingTableEntry { position: u8, token: char },
}
