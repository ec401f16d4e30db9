use std::fmt;

/// Exit code 2: the request or its inputs are invalid.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit code 1: the stage failed while running.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn validation(msg: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_VALIDATION,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn runtime(msg: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_RUNTIME,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError {
            code: EXIT_RUNTIME,
            error: e.into(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
