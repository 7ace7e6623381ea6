use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid velocity model: {}", .0.join("; "))]
    InvalidVelocityModel(Vec<String>),

    #[error("invalid chain: {0}")]
    InvalidChain(String),

    #[error("chain is reducible: {0}")]
    Reducible(String),

    #[error("invalid noise model: {0}")]
    InvalidNoise(String),

    #[error("noise path does not cover microscopic time {needed} (horizon {horizon})")]
    PathTooShort { needed: f64, horizon: f64 },

    #[error("interval [{start}, {end}] straddles a noise jump")]
    StraddlesJump { start: f64, end: f64 },

    #[error("trajectory diverged at t = {time}: |f| = {norm:e}")]
    Overflow { time: f64, norm: f64 },

    #[error("pairwise solve budget exceeded for mode pair ({0}, {1}): product chain has {2} states")]
    PairBudget(usize, usize, usize),

    #[error("expected {expected} gaussian increments, got {found}")]
    IncrementCount { expected: usize, found: usize },

    #[error("insufficient ensemble: {found} trajectories (need at least {needed})")]
    InsufficientEnsemble { found: usize, needed: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("{failed} of {total} trajectories failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("moment bound exceeded at eps = {epsilon}, t = {time}: {value} > {threshold}")]
    MomentBound {
        epsilon: f64,
        time: f64,
        value: f64,
        threshold: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
