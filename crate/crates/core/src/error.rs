use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// A single failed structural condition found by a converter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Constraint number in the converter's own numbering.
    pub constraint: u8,
    /// Offending rule (or unit / gate) index, if the defect is local.
    pub rule: Option<usize>,
    pub message: String,
}

impl Violation {
    pub fn rule(constraint: u8, rule: usize, message: impl Into<String>) -> Self {
        Self {
            constraint,
            rule: Some(rule),
            message: message.into(),
        }
    }

    pub fn model(constraint: u8, message: impl Into<String>) -> Self {
        Self {
            constraint,
            rule: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.rule {
            Some(k) => write!(
                f,
                "constraint ({}) rule {}: {}",
                self.constraint, k, self.message
            ),
            None => write!(f, "constraint ({}): {}", self.constraint, self.message),
        }
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("conversion refused: {}", join_violations(.0))]
    Constraint(Vec<Violation>),

    #[error("unsupported membership function: {0}")]
    UnsupportedMembership(String),

    #[error("degenerate rules {rules:?}: {reason}")]
    DegenerateRules { rules: Vec<usize>, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
