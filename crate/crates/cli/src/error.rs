use std::fmt;
use std::path::Path;

/// Failure of a command, carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or missing inputs: exit code 2.
    Usage(String),
    /// Anything that went wrong while running: exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<tlrp_core::Error> for CliError {
    fn from(e: tlrp_core::Error) -> Self {
        use tlrp_core::Error as E;
        match e {
            E::Usage(_) | E::Config(_) | E::Parameter(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Input files must exist before any work starts.
pub fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} `{}` does not exist", path.display())))
    }
}

pub fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("i/o error on {}: {e}", path.display()))
}
