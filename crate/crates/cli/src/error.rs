use std::fmt;

/// Process exit statuses.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    /// I/O failures and failed reproduction checks.
    pub const FAILURE: i32 = 1;
    pub const VALIDATION: i32 = 2;
    pub const NOT_CONVERGED: i32 = 3;
    pub const PARSE: i32 = 4;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(exit::VALIDATION, message)
    }

    pub fn parse(message: impl Into<String>) -> Self {
        Self::new(exit::PARSE, message)
    }

    pub fn with_context(mut self, context: &str) -> Self {
        self.message = format!("{context}: {}", self.message);
        self
    }

    pub fn io(context: &str, err: std::io::Error) -> Self {
        Self::new(exit::FAILURE, format!("{context}: {err}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<ifdiv::Error> for CliError {
    fn from(err: ifdiv::Error) -> Self {
        use ifdiv::Error::*;
        let code = match err {
            NotConverged { .. } => exit::NOT_CONVERGED,
            Parse { .. } | EmptyTrace | TraceTooShort(_) => exit::PARSE,
            _ => exit::VALIDATION,
        };
        Self::new(code, err.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
