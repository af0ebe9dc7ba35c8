use std::fmt;
use std::path::Path;

/// Exit code for a failed check or gradient suite.
pub const EXIT_CHECK_FAILED: i32 = 1;
/// Exit code for bad arguments, configs or input files.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub struct CliError {
    pub message: String,
    pub hint: String,
    pub code: i32,
}

impl CliError {
    pub fn usage(message: impl Into<String>, hint: impl Into<String>) -> Self {
        CliError { message: message.into(), hint: hint.into(), code: EXIT_USAGE }
    }

    pub fn failed(message: impl Into<String>) -> Self {
        CliError { message: message.into(), hint: String::new(), code: EXIT_CHECK_FAILED }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::usage(format!("{}: {err}", path.display()), "check that the path exists and is accessible")
    }

    pub fn context(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error: {}", self.message)?;
        if !self.hint.is_empty() {
            write!(f, "\nhint: {}", self.hint)?;
        }
        Ok(())
    }
}

impl std::error::Error for CliError {}
