use std::fmt;

/// A failed command: the error class, its exit code and a message carrying
/// the file context.
#[derive(Debug)]
pub struct CliError {
    pub class: &'static str,
    pub detail: &'static str,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            class: "ConfigError",
            detail: "ConfigError",
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            class: "DataError",
            detail: "DataError",
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class {
            "DataError" => 2,
            "ConfigError" => 3,
            "TrainingError" => 4,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.class == self.detail {
            write!(f, "{}: {}", self.class, self.message)
        } else {
            write!(f, "{} ({}): {}", self.class, self.detail, self.message)
        }
    }
}

impl From<sfid::Error> for CliError {
    fn from(e: sfid::Error) -> Self {
        let class = match e {
            sfid::Error::Config(_) => "ConfigError",
            sfid::Error::Training { .. } => "TrainingError",
            _ => "DataError",
        };
        Self {
            class,
            detail: e.class(),
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub trait Context<T> {
    /// Prefixes the error message with what was being done.
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T, E: Into<CliError>> Context<T> for Result<T, E> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| {
            let mut e = e.into();
            e.message = format!("{}: {}", what(), e.message);
            e
        })
    }
}
