//! CLI error type carrying the process exit code.
//!
//! Exit codes: 0 success, 1 configuration error, 2 external-client failure,
//! 3 data inconsistency.

use std::fmt;

use supreme_core::embed::EmbedError;
use supreme_core::entities::EntityError;
use supreme_core::model::ModelError;
use supreme_core::signal::SignalError;
use supreme_core::train::TrainError;

#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration, flags, or incompatible settings. Exit 1.
    Config(String),
    /// The extraction service failed after retries. Exit 2.
    Client(String),
    /// Inputs exist but are malformed or mutually inconsistent. Exit 3.
    Data(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Client(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Client(m) => write!(f, "client error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<EntityError> for CliError {
    fn from(e: EntityError) -> Self {
        match e {
            EntityError::Client(_) => CliError::Client(e.to_string()),
            EntityError::Config(_) | EntityError::EmptyVocabulary | EntityError::Normalization(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SignalError> for CliError {
    fn from(e: SignalError) -> Self {
        match e {
            SignalError::DegenerateSplit(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::Shape(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::Model(m) => m.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("io error: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
