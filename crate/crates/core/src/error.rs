use std::path::PathBuf;

use thiserror::Error;

use crate::engine::SimTime;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("event scheduled at {at} but the clock is already at {now}")]
    PastEvent { at: SimTime, now: SimTime },
    #[error("event queue exhausted at {at} before the stop condition held")]
    Starved { at: SimTime },
}

/// Invalid model parameters, detected before a run starts.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown region `{0}`")]
    UnknownRegion(String),
    #[error("{0}")]
    Invalid(String),
}

impl ConfigError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        ConfigError::Invalid(msg.into())
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: parse error: {message}")]
    Parse { origin: String, message: String },
    #[error("{origin}{}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Invalid {
        origin: String,
        line: Option<usize>,
        message: String,
    },
    #[error("network dataset `{0}` not found")]
    MissingDataset(String),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("simulation fault: {0}")]
    Engine(#[from] EngineError),
    #[error("unknown sweep parameter `{0}`")]
    UnknownParameter(String),
    #[error("bad value `{value}` for `{param}`: {reason}")]
    BadValue {
        param: String,
        value: String,
        reason: String,
    },
    #[error("sweep needs at least one value")]
    EmptySweep,
    #[error("writing {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    /// True for problems with the input rather than the simulation itself.
    pub fn is_validation(&self) -> bool {
        !matches!(self, RunError::Engine(_) | RunError::Output { .. })
    }
}
