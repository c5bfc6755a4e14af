//! Crate-wide error type and exit-code mapping.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input validation failed; carries every violated constraint, not just
    /// the first one found.
    #[error("validation failed:\n{}", format_violations(.0))]
    Validation(Vec<String>),

    /// A mathematical precondition does not hold (non-positive time
    /// constant, zero instrument span, negative pressure, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("pair is not observable: observability rank {rank} < state dimension {dim}")]
    Unobservable { rank: usize, dim: usize },

    #[error("pole placement failed: {0}")]
    Placement(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    /// The integration guard tripped: a state went non-finite.
    #[error("simulation aborted at step {step} (t = {time} s): {detail}")]
    Instability {
        step: usize,
        time: f64,
        detail: String,
    },

    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code for the CLI: 1 for configuration/validation
    /// problems, 2 for runtime failures (instability, design failure, io).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Domain(_) | Error::Parse { .. } => 1,
            _ => 2,
        }
    }
}

fn format_violations(violations: &[String]) -> String {
    violations
        .iter()
        .map(|v| format!("  - {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}
