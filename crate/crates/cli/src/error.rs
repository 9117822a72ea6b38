use std::fmt;
use std::path::Path;

/// Failure class, which doubles as the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Config = 2,
    Io = 3,
    Numeric = 4,
    Collapse = 5,
}

#[derive(Debug)]
pub struct CliError {
    pub class: ExitClass,
    pub message: String,
}

impl CliError {
    pub fn new(class: ExitClass, message: impl Into<String>) -> Self {
        Self {
            class,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ExitClass::Config, message)
    }

    /// Any failure to read or parse `path` is an I/O failure.
    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self::new(ExitClass::Io, format!("{}: {err}", path.display()))
    }

    pub fn code(&self) -> i32 {
        self.class as i32
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<hhcl::Error> for CliError {
    fn from(err: hhcl::Error) -> Self {
        use hhcl::Error as E;
        let class = match &err {
            E::Io(_) | E::Format(_) => ExitClass::Io,
            E::Numeric(_) | E::DegenerateMean { .. } => ExitClass::Numeric,
            E::ClusteringCollapse(_) => ExitClass::Collapse,
            E::Config { .. }
            | E::Validation(_)
            | E::Parameter(_)
            | E::Evaluation(_)
            | E::SpecInfeasible(_)
            | E::Json(_) => ExitClass::Config,
        };
        Self::new(class, err.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
