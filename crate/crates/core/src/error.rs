use std::path::PathBuf;

use thiserror::Error;

use crate::types::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported schema_version {found:?} (expected {expected:?})")]
    UnsupportedVersion { found: String, expected: &'static str },

    #[error("validation failed: {}", join_violations(.0))]
    Validation(Vec<Violation>),

    #[error("frame sets differ: missing from student {missing_in_student:?}, missing from teacher {missing_in_teacher:?}")]
    FrameMismatch {
        missing_in_student: Vec<u64>,
        missing_in_teacher: Vec<u64>,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("adapter {adapter:?} exited with {}: {diagnostics}", exit_label(.exit_code))]
    AdapterFailed {
        adapter: String,
        exit_code: Option<i32>,
        diagnostics: String,
    },

    #[error("adapter {adapter:?} timed out after {timeout_secs} s")]
    AdapterTimeout { adapter: String, timeout_secs: f64 },

    #[error("adapter {adapter:?} produced invalid output: {source}")]
    AdapterOutput {
        adapter: String,
        #[source]
        source: Box<Error>,
    },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

fn exit_label(code: &Option<i32>) -> String {
    match code {
        Some(c) => format!("exit code {c}"),
        None => "signal".to_string(),
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// Process exit code: 2 usage/config, 3 adapter failure, 4 validation failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Io { .. } => 2,
            Error::AdapterFailed { .. } | Error::AdapterTimeout { .. } => 3,
            Error::Parse { .. }
            | Error::UnsupportedVersion { .. }
            | Error::Validation(_)
            | Error::FrameMismatch { .. } => 4,
            Error::AdapterOutput { source, .. } | Error::Stage { source, .. } => source.exit_code(),
        }
    }

    /// Innermost error, skipping stage and adapter wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AdapterOutput { source, .. } | Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
