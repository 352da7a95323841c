use std::path::PathBuf;

use thiserror::Error;

/// Invalid or unreadable configuration.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("failed to parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    pub fn invalid(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid mesh specification: {0}")]
    InvalidSpec(String),
    #[error("probe position {0:?} lies outside the mesh")]
    OutsideDomain([f64; 3]),
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("linear solver broke down after {iterations} iterations (residual {residual:e})")]
    LinearBreakdown { iterations: usize, residual: f64 },
    #[error("linear solver did not converge in {iterations} iterations (residual {residual:e})")]
    LinearNotConverged { iterations: usize, residual: f64 },
    #[error(
        "outer iterations did not converge at t = {time} s after {iterations} sweeps \
         (last residuals C {last_c:e}, T {last_t:e})"
    )]
    OuterNotConverged {
        time: f64,
        iterations: usize,
        last_c: f64,
        last_t: f64,
        history: Vec<(f64, f64)>,
    },
    #[error("non-finite value in field {field} at t = {time} s")]
    NonFinite { field: &'static str, time: f64 },
    #[error("step failed at t = {time} s: {source}")]
    AtTime {
        time: f64,
        #[source]
        source: Box<SolverError>,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Error, PartialEq)]
pub enum GciError {
    #[error("at least three grids are required, got {0}")]
    TooFewGrids(usize),
    #[error("grid spacings must be positive and strictly increasing from fine to coarse")]
    NonMonotoneSpacing,
    #[error("solution differences between grids vanish; apparent order undefined")]
    ZeroDifference,
    #[error("oscillatory convergence: e32/e21 = {ratio}")]
    OscillatoryConvergence { ratio: f64 },
    #[error("apparent-order iteration did not converge after {0} iterations")]
    NotConverged(usize),
}

#[derive(Debug, Error)]
pub enum RomError {
    #[error("training set is empty or too short: {0}")]
    InsufficientData(String),
    #[error("regression is rank deficient (condition number {condition:e})")]
    RankDeficient { condition: f64 },
    #[error("more features ({features}) than samples ({samples}) and no ridge regularization")]
    Underdetermined { features: usize, samples: usize },
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("rollout diverged at t = {time} s")]
    Diverged { time: f64 },
    #[error("time series do not overlap")]
    DisjointTimeRanges,
    #[error("training set mismatch: {0}")]
    Mismatch(String),
    #[error("malformed ROM file, line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("plant step failed: {0}")]
    Plant(#[from] SolverError),
    #[error("ROM plant failed: {0}")]
    Rom(#[from] RomError),
}

/// Top-level error used by the command line and scenario drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Gci(#[from] GciError),
    #[error(transparent)]
    Rom(#[from] RomError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Csv(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
