use std::fmt;
use std::path::PathBuf;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration: unknown key, malformed or out-of-range value.
    Config {
        /// 1-based line in the config file; `None` for flags and cross-field checks.
        line: Option<usize>,
        key: Option<String>,
        message: String,
    },
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// Malformed checkpoint or dataset file.
    Format {
        path: PathBuf,
        message: String,
    },
    Core(bem_core::Error),
    Csv(csv::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(line: Option<usize>, key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            line,
            key: Some(key.into()),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Core(bem_core::Error::Config(_)) => EXIT_CONFIG,
            _ => EXIT_CHECK_FAILURE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { line, key, message } => {
                write!(f, "config error")?;
                if let Some(line) = line {
                    write!(f, " at line {line}")?;
                }
                if let Some(key) = key {
                    write!(f, " in `{key}`")?;
                }
                write!(f, ": {message}")
            }
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Format { path, message } => write!(f, "{}: {message}", path.display()),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Csv(e) => write!(f, "csv: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<bem_core::Error> for CliError {
    fn from(e: bem_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Csv(e)
    }
}
