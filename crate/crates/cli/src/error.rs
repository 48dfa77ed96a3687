use std::fmt;

use auditlp::AuditError;

/// Exit status classes: 1 for pipeline failures, 2 for usage and I/O.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Pipeline,
    Usage,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Usage,
            message: message.into(),
        }
    }

    pub fn pipeline(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Pipeline,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            Kind::Pipeline => 1,
            Kind::Usage => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<AuditError> for CliError {
    fn from(e: AuditError) -> Self {
        let kind = match e {
            AuditError::Io { .. } | AuditError::UnknownFormat(_) | AuditError::InvalidConfig(_) => Kind::Usage,
            _ => Kind::Pipeline,
        };
        CliError {
            kind,
            message: e.to_string(),
        }
    }
}

pub fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::usage(format!("{}: {e}", path.display()))
}
