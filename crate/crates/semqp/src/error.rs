use std::fmt;

use semqp_core::effects::EffectsError;
use semqp_core::montecarlo::SimError;
use semqp_core::{ModelError, QpError};

/// Process exit status categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Ok = 0,
    /// Unreadable file, malformed JSON, unknown keys, bad flag syntax.
    Parse = 2,
    /// Model or flag values rejected, precondition unmet.
    Validation = 3,
    /// Unbounded problem, iteration limit, path explosion, KKT failure.
    Solver = 4,
    /// Monte Carlo disagrees with the analytic moments.
    Mismatch = 5,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn parse(message: impl Into<String>) -> Self {
        CliError {
            kind: ExitKind::Parse,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            kind: ExitKind::Validation,
            message: message.into(),
        }
    }

    pub fn solver(message: impl Into<String>) -> Self {
        CliError {
            kind: ExitKind::Solver,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<EffectsError> for CliError {
    fn from(e: EffectsError) -> Self {
        match e {
            EffectsError::PathExplosion { .. } => CliError::solver(e.to_string()),
            _ => CliError::validation(e.to_string()),
        }
    }
}

impl From<QpError> for CliError {
    fn from(e: QpError) -> Self {
        match e {
            QpError::Unbounded { .. } | QpError::MaxIterations { .. } => CliError::solver(e.to_string()),
            QpError::Effects(inner) => inner.into(),
            _ => CliError::validation(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::validation(e.to_string())
    }
}
