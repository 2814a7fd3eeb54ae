use thiserror::Error;

/// Errors raised by the planner, solvers and simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("energy causality violated: transmission from an empty battery")]
    EnergyCausality,

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("belief index (anchor={anchor}, age={age}) outside atlas with B={capacity}, M={depth}")]
    IndexOutOfRange {
        anchor: usize,
        age: usize,
        capacity: usize,
        depth: usize,
    },

    #[error("bracket expansion for the Lagrange multiplier exceeded {cap}")]
    BracketOverflow { cap: f64 },

    #[error("budget violated at slot {slot}: {commanded} commands issued with N = {budget}")]
    BudgetViolation {
        slot: u64,
        commanded: usize,
        budget: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
