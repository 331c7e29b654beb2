use std::fmt;
use std::path::Path;

use sundae_core::Error;

/// A failure reported as one `error: <kind>: <message>` line on stderr.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    pub code: i32,
}

impl CliError {
    pub fn new(kind: &'static str, code: i32, message: impl Into<String>) -> Self {
        Self { kind, code, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", 1, message)
    }

    pub fn missing_path(path: &Path) -> Self {
        Self::new("missing-path", 2, format!("path does not exist: {}", path.display()))
    }

    pub fn vocab_mismatch(what: &str, a: usize, other: &str, b: usize) -> Self {
        Self::new("vocab-mismatch", 3, format!("{what} vocab {a} does not match {other} vocab {b}"))
    }

    pub fn from_io(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            Self::missing_path(path)
        } else {
            Self::new("io", 1, format!("{}: {e}", path.display()))
        }
    }

    pub fn line(&self) -> String {
        format!("error: {}: {}", self.kind, self.message.replace('\n', " "))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (kind, msg) = match e {
            Error::Vocab { .. } => return Self::new("vocab-mismatch", 3, e.to_string()),
            Error::Shape(m) => ("shape", m),
            Error::Config(m) => ("config", m),
            Error::Fit(m) => ("fit", m),
            Error::Format(m) => ("format", m),
            Error::Size(m) => ("size", m),
            Error::NonFinite(m) => ("non-finite", m),
            Error::Dataset(m) => ("dataset", m),
            Error::Io(e) => ("io", e.to_string()),
        };
        Self::new(kind, 1, msg)
    }
}
