use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coincident Cauchy nodes: x[{i}] == y[{j}]")]
    CoincidentNodes { i: usize, j: usize },

    #[error("repeated Cauchy node in {which} at positions {a} and {b}")]
    RepeatedNode { which: &'static str, a: usize, b: usize },

    #[error("node vectors have different lengths ({x} vs {y})")]
    NodeLengthMismatch { x: usize, y: usize },

    #[error("dimension must be odd and >= 3, got {0}")]
    InvalidDimension(i64),

    #[error("radius must be >= 1, got {0}")]
    InvalidRadius(f64),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ODE integration failed at s = {s}: {reason}")]
    Integration { s: f64, reason: String },

    #[error("shooting bracket not found for ell={ell}, n={n} with a in (0, {a_max}]")]
    BracketNotFound { ell: u32, n: u32, a_max: f64 },

    #[error("profile has not converged: {0}")]
    NotConverged(String),

    #[error("CFL violation: dt = {dt} exceeds {limit} (0.8 dr)")]
    Cfl { dt: f64, limit: f64 },

    #[error("non-finite value at node {node}, t = {time}")]
    NonFinite { node: usize, time: f64 },

    #[error("causality margin violated: rmax = {rmax} < required {required}")]
    Causality { rmax: f64, required: f64 },

    #[error("state mismatch: {0}")]
    StateMismatch(String),

    #[error("eigenvalue iteration did not converge after {0} iterations")]
    EigenNoConvergence(usize),

    #[error("config errors:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
