use std::fmt;
use std::process::ExitCode;

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config file or environment value (exit 2).
    Config(String),
    /// Missing or unreadable input, unwritable output (exit 3).
    Io(String),
    /// A check the user asked for failed (exit 4).
    Verify(String),
    /// Anything else, e.g. training divergence (exit 1).
    Runtime(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Verify(_) => 4,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Verify(m) => write!(f, "verification failed: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<motionforge::Error> for CliError {
    fn from(e: motionforge::Error) -> Self {
        use motionforge::Error as E;
        let msg = e.to_string();
        match e {
            E::Io { .. } | E::Format { .. } | E::EmptyInput { .. } => CliError::Io(msg),
            E::Numeric(_) | E::Training { .. } => CliError::Runtime(msg),
            _ => CliError::Config(msg),
        }
    }
}

pub fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}
