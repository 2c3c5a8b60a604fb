use thiserror::Error;

use crate::grid::{BusId, LineId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid line {line}: {reason}")]
    InvalidLine { line: LineId, reason: String },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("network is not connected over in-service lines")]
    Disconnected,

    #[error("unknown bus id {0}")]
    UnknownBus(BusId),

    #[error("unknown line id {0}")]
    UnknownLine(LineId),

    #[error("incomplete phasor state: {0}")]
    IncompleteState(String),

    #[error("injections are unbalanced (sum = {sum:.3e})")]
    Imbalance { sum: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("power flow diverged after {iterations} iterations (residual {residual:.3e})")]
    Divergence { iterations: usize, residual: f64 },

    #[error("invalid power flow specification: {0}")]
    InvalidSpec(String),

    #[error("invalid attack specification: {0}")]
    InvalidAttack(String),

    #[error("no overloading attack found (best objective {best_objective:.6}, required {required:.6})")]
    AttackInfeasible {
        best_objective: f64,
        required: f64,
    },

    #[error("invalid stream: {0}")]
    InvalidStream(String),

    #[error("invalid defense configuration: {0}")]
    InvalidDefense(String),

    #[error("detector has not converged: {0}")]
    NotConverged(String),

    #[error("scenario aborted at tick {tick}: {source}")]
    ScenarioAborted {
        tick: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that originate in a power-flow solve failing to converge.
    pub fn is_divergence(&self) -> bool {
        match self {
            Error::Divergence { .. } => true,
            Error::ScenarioAborted { source, .. } => source.is_divergence(),
            _ => false,
        }
    }
}
