use std::fmt;
use std::path::Path;

/// Stable, machine-readable failure classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Code {
    Usage,
    Io,
    Parse,
    Config,
    Mining,
    Training,
}

impl Code {
    pub fn as_str(self) -> &'static str {
        match self {
            Code::Usage => "E_USAGE",
            Code::Io => "E_IO",
            Code::Parse => "E_PARSE",
            Code::Config => "E_CONFIG",
            Code::Mining => "E_MINING",
            Code::Training => "E_TRAINING",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Code::Usage => 2,
            _ => 1,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub code: Code,
    pub message: String,
}

impl CliError {
    pub fn new(code: Code, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn at(code: Code, path: &Path, err: impl fmt::Display) -> Self {
        Self::new(code, format!("{}: {err}", path.display()))
    }
}

/// One line: `error: CODE: text`, with any newlines in the text folded.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        write!(f, "error: {}: {text}", self.code.as_str())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub trait Context<T> {
    fn code(self, code: Code) -> Result<T>;
    fn code_at(self, code: Code, path: &Path) -> Result<T>;
}

impl<T, E: fmt::Display> Context<T> for std::result::Result<T, E> {
    fn code(self, code: Code) -> Result<T> {
        self.map_err(|e| CliError::new(code, e.to_string()))
    }

    fn code_at(self, code: Code, path: &Path) -> Result<T> {
        self.map_err(|e| CliError::at(code, path, e))
    }
}
