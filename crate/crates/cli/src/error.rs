use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use phasescan::models::ModelError;
use phasescan::scan::ScanError;
use phasescan::thermo::ThermoError;
use phasescan::weights::WeightsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Validation,
    Model,
    Io,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Validation => 2,
            ErrorKind::Model => 3,
            ErrorKind::Io => 4,
        }
    }
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Validation,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        Self {
            kind: ErrorKind::Io,
            message: format!("{}: {err}", path.display()),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    /// One-line JSON for stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "error": self.message,
            "kind": self.kind,
            "exit_code": self.exit_code(),
        })
        .to_string()
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let kind = model_kind(&e);
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<ScanError> for CliError {
    fn from(e: ScanError) -> Self {
        let kind = match &e {
            ScanError::Model { source, .. } => model_kind(source),
            ScanError::Io(_) | ScanError::Csv(_) => ErrorKind::Io,
            _ => ErrorKind::Validation,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<ThermoError> for CliError {
    fn from(e: ThermoError) -> Self {
        let kind = match &e {
            ThermoError::Model { source, .. } => model_kind(source),
            ThermoError::Io(_) | ThermoError::Csv(_) => ErrorKind::Io,
            _ => ErrorKind::Validation,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<WeightsError> for CliError {
    fn from(e: WeightsError) -> Self {
        let kind = match &e {
            WeightsError::Io { .. } => ErrorKind::Io,
            _ => ErrorKind::Validation,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

fn model_kind(e: &ModelError) -> ErrorKind {
    match e {
        ModelError::Cache(_) => ErrorKind::Io,
        ModelError::InvalidTemperature(_)
        | ModelError::InvalidModel(_)
        | ModelError::SequenceTooLong { .. }
        | ModelError::StateSpaceTooLarge { .. } => ErrorKind::Validation,
        _ => ErrorKind::Model,
    }
}
